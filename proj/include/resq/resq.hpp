#pragma once

// resq: a desk-scale laboratory for nonlinear residual query projections in
// attention — deterministic kernels, tape autodiff, the algebraic
// reparametrization/absorption toolkit, and a reproducible training harness.

#include "resq/attention.hpp"
#include "resq/autodiff.hpp"
#include "resq/checkpoint.hpp"
#include "resq/corpus.hpp"
#include "resq/gradcheck.hpp"
#include "resq/io.hpp"
#include "resq/kernels.hpp"
#include "resq/model.hpp"
#include "resq/optim.hpp"
#include "resq/rng.hpp"
#include "resq/svg.hpp"
#include "resq/tensor.hpp"
#include "resq/training.hpp"
#include "resq/verify.hpp"
