#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace wkcl {

// Dense containers are row-major so that one embedding or prototype is one
// contiguous row.
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VecF = Vec<float>;
using VecD = Vec<double>;
using MatF = Mat<float>;
using MatD = Mat<double>;

using ClassId = std::int32_t;
using SampleId = std::int64_t;
using IdList = std::vector<SampleId>;

}  // namespace wkcl
