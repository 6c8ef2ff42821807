#pragma once

#include <Eigen/Dense>

namespace linrel {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

} // namespace linrel
