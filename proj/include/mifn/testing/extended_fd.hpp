#pragma once

// Central differences of the toy-model loss evaluated with an 80-bit
// long double forward pass. Roundoff of a double loss limits central
// differences to about ulp(loss) / eps; the wider type lowers that floor by
// three orders of magnitude, so the reference resolves small gradient entries.
// Defined in a separately compiled unit (tools/extended_fd.cpp).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mifn::extended {

using Values = std::map<std::string, std::vector<double>>;

/// Numeric gradient of the grad_fixture(variant, seed, target) loss at
/// `params`. `variant` is a variant name, `all_positions` selects the
/// all-positions training target.
Values toy_central_differences(const Values& params, const std::string& variant, std::uint64_t seed,
                               bool all_positions, double eps);

/// The same loss evaluated once, for cross-checking against the double build.
double toy_loss(const Values& params, const std::string& variant, std::uint64_t seed, bool all_positions);

}  // namespace mifn::extended
