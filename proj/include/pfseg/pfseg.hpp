#pragma once

#include "pfseg/tensor.hpp"
#include "pfseg/parallel.hpp"
#include "pfseg/kernels.hpp"
#include "pfseg/autograd.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/gradcheck.hpp"
#include "pfseg/optim.hpp"
#include "pfseg/models.hpp"
#include "pfseg/classes.hpp"
#include "pfseg/image_io.hpp"
#include "pfseg/dataset.hpp"
#include "pfseg/metrics.hpp"
#include "pfseg/checkpoint.hpp"
#include "pfseg/train.hpp"
#include "pfseg/config.hpp"
#include "pfseg/compare.hpp"
#include "pfseg/gradsuite.hpp"
