#pragma once

#include "config.hpp"
#include "dampening.hpp"
#include "data.hpp"
#include "harness.hpp"
#include "importance.hpp"
#include "nn.hpp"
#include "poison.hpp"
#include "ptn.hpp"
#include "report.hpp"
#include "util.hpp"

namespace potionlab {
inline constexpr const char* kVersion = "0.1.0";
}
