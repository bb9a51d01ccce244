#pragma once

#include "ossa/ablation.hpp"
#include "ossa/backbone.hpp"
#include "ossa/config.hpp"
#include "ossa/domains.hpp"
#include "ossa/error.hpp"
#include "ossa/gap_report.hpp"
#include "ossa/image.hpp"
#include "ossa/io.hpp"
#include "ossa/prototype.hpp"
#include "ossa/rng.hpp"
#include "ossa/stats.hpp"
#include "ossa/style_transform.hpp"
#include "ossa/tensor.hpp"
#include "ossa/train.hpp"
