#pragma once

#include "licq/core/adam.hpp"
#include "licq/core/error.hpp"
#include "licq/core/gradcheck.hpp"
#include "licq/core/ops.hpp"
#include "licq/core/rng.hpp"
#include "licq/core/tensor.hpp"
#include "licq/quant/quantizer.hpp"
#include "licq/layers/gdn.hpp"
#include "licq/codec/entropy.hpp"
#include "licq/codec/model.hpp"
#include "licq/codec/forward.hpp"
#include "licq/codec/train.hpp"
#include "licq/codec/int_infer.hpp"
#include "licq/draq/calibrate.hpp"
#include "licq/draq/finetune.hpp"
#include "licq/hwopt/bitwidth.hpp"
#include "licq/hwopt/search.hpp"
#include "licq/hwopt/flops.hpp"
#include "licq/hwopt/slim.hpp"
#include "licq/metrics/psnr.hpp"
#include "licq/metrics/bd_rate.hpp"
#include "licq/metrics/msqe_table.hpp"
#include "licq/io/ppm.hpp"
#include "licq/io/synth.hpp"
#include "licq/io/checkpoint.hpp"
#include "licq/io/config.hpp"
#include "licq/io/csv.hpp"
#include "licq/io/pipeline.hpp"
