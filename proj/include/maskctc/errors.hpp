#pragma once

#include <stdexcept>
#include <string>

namespace maskctc {

// Exit-code mapping used by the CLI:
//   ConfigError -> 1 (usage), DataError -> 2, everything else here -> 3.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace maskctc
