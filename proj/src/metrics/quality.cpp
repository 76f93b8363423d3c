#include "itst/metrics/quality.hpp"

#include <algorithm>
#include <string>

#include "itst/errors.hpp"

namespace itst::metrics {

std::size_t token_matches(std::span<const int> hyp, std::span<const int> ref) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < std::min(hyp.size(), ref.size()); ++i) n += hyp[i] == ref[i];
  return n;
}

bool exact_match(std::span<const int> hyp, std::span<const int> ref) {
  return std::equal(hyp.begin(), hyp.end(), ref.begin(), ref.end());
}

QualityReport evaluate_quality(std::span<const std::vector<int>> hyps,
                               std::span<const std::vector<int>> refs) {
  if (hyps.size() != refs.size()) {
    throw DimensionError("evaluate_quality: " + std::to_string(hyps.size()) + " hypotheses vs " +
                         std::to_string(refs.size()) + " references");
  }
  QualityReport r;
  std::size_t matches = 0, total = 0, exact = 0;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    matches += token_matches(hyps[s], refs[s]);
    total += refs[s].size();
    exact += exact_match(hyps[s], refs[s]);
  }
  if (total > 0) r.token_accuracy = static_cast<double>(matches) / static_cast<double>(total);
  if (!hyps.empty()) r.exact_match = static_cast<double>(exact) / static_cast<double>(hyps.size());
  return r;
}

}  // namespace itst::metrics
