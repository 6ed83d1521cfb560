#pragma once

#include "tinyadapt/errors.hpp"
#include "tinyadapt/rng.hpp"
#include "tinyadapt/tensor.hpp"
#include "tinyadapt/ops.hpp"
#include "tinyadapt/gradcheck.hpp"
#include "tinyadapt/model.hpp"
#include "tinyadapt/nf4.hpp"
#include "tinyadapt/lora.hpp"
#include "tinyadapt/tokenizer.hpp"
#include "tinyadapt/templating.hpp"
#include "tinyadapt/encoding.hpp"
#include "tinyadapt/optim.hpp"
#include "tinyadapt/training.hpp"
#include "tinyadapt/evaluation.hpp"
#include "tinyadapt/dataset.hpp"
#include "tinyadapt/checkpoint.hpp"
#include "tinyadapt/config.hpp"
#include "tinyadapt/toydata.hpp"
#include "tinyadapt/cli.hpp"
