#pragma once

// Umbrella header.

#include "mfhogp/error.hpp"
#include "mfhogp/numerics.hpp"
#include "mfhogp/kernels.hpp"
#include "mfhogp/matnorm.hpp"
#include "mfhogp/coreg.hpp"
#include "mfhogp/autodiff.hpp"
#include "mfhogp/mfmodel.hpp"
#include "mfhogp/elbo.hpp"
#include "mfhogp/svi.hpp"
#include "mfhogp/predict.hpp"
#include "mfhogp/pdegen.hpp"
#include "mfhogp/io.hpp"
#include "mfhogp/baseline.hpp"
#include "mfhogp/pipeline.hpp"
