#pragma once
// Information transport between source and target tokens: the sigmoid
// transport weights, their fusion into cross-attention, the latency cost
// matrices and the two regularizers built on them.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "itst/tensor/graph.hpp"
#include "itst/tensor/tensor.hpp"
#include "json.hpp"

namespace itst::transport {

/// Transport weights T (I x J, entries in (0,1)). layer_index is the decoder
/// layer that produced it, or -1 for the policy aggregate.
struct TransportMatrix {
  Tensor weights;
  int layer_index = -1;

  std::size_t target_len() const { return weights.rows(); }
  std::size_t source_len() const { return weights.cols(); }
};

enum class CostForm { kDiagonal, kUpperTriangular, kLowerTriangular };

std::string_view to_string(CostForm form);
/// Accepts diagonal | upper | lower (and the long forms). Throws FormatError.
CostForm parse_cost_form(std::string_view text);

struct LatencyCostMatrix {
  Tensor costs;
  CostForm form = CostForm::kDiagonal;
  double xi = 1.0;
};

struct FusedAttention {
  Tensor alpha;
  Tensor beta;
};

enum class LayerAggregation { kMean, kLast };

std::string_view to_string(LayerAggregation agg);
LayerAggregation parse_aggregation(std::string_view text);

/// T_ij = sigmoid((s_i Vq)(z_j Vk)^T / sqrt(d_k)) with d_k the width of s.
Var compute_transport(Graph& g, Var s, Var z, Var vq, Var vk);
TransportMatrix compute_transport(const Tensor& s, const Tensor& z, const Tensor& vq,
                                  const Tensor& vk);

/// beta_ij = alpha_ij T_ij / sum_j alpha_ij T_ij.
Var fuse_attention(Graph& g, Var alpha, Var transport);
FusedAttention fuse_attention(const Tensor& alpha, const TransportMatrix& t);

/// Cost of moving information from x_j to y_i, with 1-based i and j:
///   max(|j - i J / I| - xi, 0) / (I J)
/// Upper-triangular zeroes j < i J / I; lower-triangular zeroes j > i J / I.
LatencyCostMatrix latency_cost(std::size_t target_len, std::size_t source_len, double xi = 1.0,
                               CostForm form = CostForm::kDiagonal);

/// sum_ij T_ij C_ij
Var latency_loss(Graph& g, Var transport, const LatencyCostMatrix& cost);
double latency_loss(const TransportMatrix& t, const LatencyCostMatrix& cost);

/// sum_i |sum_j T_ij - 1|
Var norm_loss(Graph& g, Var transport);
double norm_loss(const TransportMatrix& t);

/// sum_{l <= j} T_il with 1-based i, j. Throws IndexError when out of range.
double cumulative_information(const TransportMatrix& t, std::size_t i, std::size_t j);
double cumulative_information(std::span<const double> row, std::size_t j);

/// Combines per-layer matrices of equal shape into the policy aggregate.
TransportMatrix aggregate_layers(std::span<const TransportMatrix> layers, LayerAggregation agg);

/// {"I": I, "J": J, "rows": [[...], ...]} (plus "layer" when not the aggregate).
nlohmann::json to_json(const TransportMatrix& t);
TransportMatrix transport_from_json(const nlohmann::json& j);

}  // namespace itst::transport
