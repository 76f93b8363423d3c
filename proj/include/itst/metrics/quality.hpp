#pragma once
// Toy-scale translation quality: position-wise token accuracy and exact match
// against a reference that ends with EOS.

#include <cstddef>
#include <span>
#include <vector>

namespace itst::metrics {

/// Matching positions of hyp against ref, over the length of ref.
std::size_t token_matches(std::span<const int> hyp, std::span<const int> ref);
bool exact_match(std::span<const int> hyp, std::span<const int> ref);

struct QualityReport {
  double token_accuracy = 0.0;  // total matches / total reference tokens
  double exact_match = 0.0;     // fraction of sentences
};

/// Throws DimensionError when the counts differ.
QualityReport evaluate_quality(std::span<const std::vector<int>> hyps,
                               std::span<const std::vector<int>> refs);

}  // namespace itst::metrics
