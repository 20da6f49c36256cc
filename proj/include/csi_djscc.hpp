#pragma once

#include "csi_djscc/errors.hpp"
#include "csi_djscc/types.hpp"
#include "csi_djscc/transforms.hpp"
#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/dataset_io.hpp"
#include "csi_djscc/phy_channel.hpp"
#include "csi_djscc/nn/tensor.hpp"
#include "csi_djscc/nn/layers.hpp"
#include "csi_djscc/nn/af_module.hpp"
#include "csi_djscc/nn/networks.hpp"
#include "csi_djscc/nn/model.hpp"
#include "csi_djscc/sweep.hpp"
#include "csi_djscc/quantization.hpp"
#include "csi_djscc/pipeline.hpp"
#include "csi_djscc/training.hpp"
#include "csi_djscc/evaluation.hpp"
#include "csi_djscc/report.hpp"
#include "csi_djscc/experiment.hpp"
