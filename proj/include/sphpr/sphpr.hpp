#pragma once

#include "sphpr/sphere.hpp"
#include "sphpr/kernels.hpp"
#include "sphpr/parallel.hpp"
#include "sphpr/pr.hpp"
#include "sphpr/structural_likelihood.hpp"
#include "sphpr/gof.hpp"
#include "sphpr/em.hpp"
#include "sphpr/simulation.hpp"
#include "sphpr/clustering.hpp"
#include "sphpr/io.hpp"
