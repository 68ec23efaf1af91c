// Extended-precision build of the toy model, used only as a gradient reference.

#define MIFN_REAL long double
#define MIFN_PRECISION f80

#include "mifn/testing/extended_fd.hpp"
#include "mifn/testing/toy.hpp"

namespace mifn::extended {

namespace {

testing::GradFixture fixture(const Values& params, const std::string& variant, std::uint64_t seed,
                             bool all_positions) {
  auto f = testing::grad_fixture(parse_variant(variant), seed,
                                 all_positions ? TrainTarget::kAllPositions : TrainTarget::kLastItem);
  import_values(f.params, params);
  return f;
}

}  // namespace

Values toy_central_differences(const Values& params, const std::string& variant, std::uint64_t seed,
                               bool all_positions, double eps) {
  auto f = fixture(params, variant, seed, all_positions);
  return central_differences(testing::fixture_loss(f), f.params, eps);
}

double toy_loss(const Values& params, const std::string& variant, std::uint64_t seed, bool all_positions) {
  auto f = fixture(params, variant, seed, all_positions);
  return static_cast<double>(evaluate_loss(testing::fixture_loss(f), f.params));
}

}  // namespace mifn::extended
