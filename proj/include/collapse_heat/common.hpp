#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace collapse_heat {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline constexpr const char* kVersion = "0.1.0";

// Exit/status codes shared by the C API and the CLI.
enum class Status : int {
  ok = 0,
  verdict_fail = 1,
  config_error = 2,
  numeric_error = 3,
  invalid_argument = 4,
  internal_error = 5,
};

class Error : public std::runtime_error {
 public:
  Error(Status status, const std::string& what) : std::runtime_error(what), status_(status) {}
  Status status() const noexcept { return status_; }

 private:
  Status status_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error(Status::invalid_argument, what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(Status::config_error, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(Status::numeric_error, what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

enum class BoundaryCondition { dirichlet, neumann };

inline const char* to_string(BoundaryCondition bc) {
  return bc == BoundaryCondition::dirichlet ? "dirichlet" : "neumann";
}

BoundaryCondition parse_bc(const std::string& s);

}  // namespace collapse_heat
