#pragma once

#include "ccqm.hpp"
#include "csl.hpp"
#include "dynamics.hpp"
#include "entropy.hpp"
#include "errors.hpp"
#include "feynman.hpp"
#include "grw.hpp"
#include "kernels.hpp"
#include "lattice.hpp"
#include "registry.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "transition.hpp"
#include "wavefunction.hpp"
