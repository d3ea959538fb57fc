#pragma once

#include "ccaqed/error.hpp"
#include "ccaqed/model.hpp"
#include "ccaqed/hamiltonian.hpp"
#include "ccaqed/dense_eigen.hpp"
#include "ccaqed/spectral.hpp"
#include "ccaqed/scattering.hpp"
#include "ccaqed/parallel.hpp"
#include "ccaqed/sweeps.hpp"
#include "ccaqed/config.hpp"
#include "ccaqed/commands.hpp"
