#pragma once

#include <string>

#include "safer/training.hpp"

namespace safer {

// "SFRP" binary parameter container.
void save_prior(const PriorModel& model, const std::string& path);
PriorModel load_prior(const std::string& path);

}  // namespace safer
