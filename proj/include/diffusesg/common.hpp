#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace dsg {

// Row-major throughout: tensors are flattened position-major, channels last.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numeric 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal contract (shape mismatch, bad call ordering).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

inline void check_contract(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}

}  // namespace dsg
