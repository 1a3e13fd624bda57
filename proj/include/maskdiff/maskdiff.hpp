// Convenience umbrella for the whole library.
#pragma once

#include "maskdiff/dataset.hpp"
#include "maskdiff/denoiser.hpp"
#include "maskdiff/eval.hpp"
#include "maskdiff/io.hpp"
#include "maskdiff/kernels.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/samplers.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/training.hpp"
#include "maskdiff/vocab.hpp"
