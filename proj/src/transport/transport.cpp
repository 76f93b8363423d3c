#include "itst/transport/transport.hpp"

#include <cmath>
#include <string>

#include "itst/errors.hpp"

namespace itst::transport {

std::string_view to_string(CostForm form) {
  switch (form) {
    case CostForm::kDiagonal:
      return "diagonal";
    case CostForm::kUpperTriangular:
      return "upper";
    case CostForm::kLowerTriangular:
      return "lower";
  }
  return "diagonal";
}

CostForm parse_cost_form(std::string_view text) {
  if (text == "diagonal") return CostForm::kDiagonal;
  if (text == "upper" || text == "upper-triangular") return CostForm::kUpperTriangular;
  if (text == "lower" || text == "lower-triangular") return CostForm::kLowerTriangular;
  throw FormatError("unknown cost form '" + std::string(text) + "' (diagonal|upper|lower)");
}

std::string_view to_string(LayerAggregation agg) {
  return agg == LayerAggregation::kMean ? "mean" : "last";
}

LayerAggregation parse_aggregation(std::string_view text) {
  if (text == "mean") return LayerAggregation::kMean;
  if (text == "last") return LayerAggregation::kLast;
  throw FormatError("unknown layer aggregation '" + std::string(text) + "' (mean|last)");
}

Var compute_transport(Graph& g, Var s, Var z, Var vq, Var vk) {
  const std::size_t dk = g.value(s).cols();
  if (dk == 0) throw DimensionError("compute_transport: zero-width target states");
  if (g.value(z).cols() != dk) {
    throw DimensionError("compute_transport: target width " + std::to_string(dk) +
                         " vs source width " + std::to_string(g.value(z).cols()));
  }
  Var q = g.matmul(s, vq);
  Var k = g.matmul(z, vk);
  Var scores = g.scale(g.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
  return g.sigmoid(scores);
}

TransportMatrix compute_transport(const Tensor& s, const Tensor& z, const Tensor& vq,
                                  const Tensor& vk) {
  Graph g(GradMode::kInference);
  Var t = compute_transport(g, g.constant(s), g.constant(z), g.constant(vq), g.constant(vk));
  return TransportMatrix{g.value(t), -1};
}

Var fuse_attention(Graph& g, Var alpha, Var transport) {
  const Tensor& a = g.value(alpha);
  const Tensor& t = g.value(transport);
  if (a.rows() != t.rows() || a.cols() != t.cols()) {
    throw DimensionError("fuse_attention: alpha " + a.shape_string() + " vs transport " +
                         t.shape_string());
  }
  return g.normalize_rows(g.mul(alpha, transport));
}

FusedAttention fuse_attention(const Tensor& alpha, const TransportMatrix& t) {
  Graph g(GradMode::kInference);
  Var beta = fuse_attention(g, g.constant(alpha), g.constant(t.weights));
  return FusedAttention{alpha, g.value(beta)};
}

LatencyCostMatrix latency_cost(std::size_t target_len, std::size_t source_len, double xi,
                               CostForm form) {
  if (target_len == 0 || source_len == 0) {
    throw DimensionError("latency_cost: lengths must be at least 1");
  }
  if (!(xi >= 0.0)) throw std::invalid_argument("latency_cost: xi must be non-negative");
  const double I = static_cast<double>(target_len);
  const double J = static_cast<double>(source_len);
  const double norm = 1.0 / (I * J);
  LatencyCostMatrix c{Tensor(target_len, source_len), form, xi};
  for (std::size_t i = 1; i <= target_len; ++i) {
    const double diag = static_cast<double>(i) * J / I;
    for (std::size_t j = 1; j <= source_len; ++j) {
      const double jd = static_cast<double>(j);
      if (form == CostForm::kUpperTriangular && jd < diag) continue;
      if (form == CostForm::kLowerTriangular && jd > diag) continue;
      c.costs(i - 1, j - 1) = std::max(std::fabs(jd - diag) - xi, 0.0) * norm;
    }
  }
  return c;
}

Var latency_loss(Graph& g, Var transport, const LatencyCostMatrix& cost) {
  const Tensor& t = g.value(transport);
  if (t.rows() != cost.costs.rows() || t.cols() != cost.costs.cols()) {
    throw DimensionError("latency_loss: transport " + t.shape_string() + " vs cost " +
                         cost.costs.shape_string());
  }
  return g.sum(g.mul(transport, g.constant(cost.costs)));
}

double latency_loss(const TransportMatrix& t, const LatencyCostMatrix& cost) {
  Graph g(GradMode::kInference);
  return g.value(latency_loss(g, g.constant(t.weights), cost))[0];
}

Var norm_loss(Graph& g, Var transport) {
  return g.sum(g.abs(g.add_scalar(g.row_sum(transport), -1.0)));
}

double norm_loss(const TransportMatrix& t) {
  Graph g(GradMode::kInference);
  return g.value(norm_loss(g, g.constant(t.weights)))[0];
}

double cumulative_information(std::span<const double> row, std::size_t j) {
  if (j < 1 || j > row.size()) {
    throw IndexError("cumulative_information: source index " + std::to_string(j) +
                     " outside [1, " + std::to_string(row.size()) + "]");
  }
  double s = 0.0;
  for (std::size_t l = 0; l < j; ++l) s += row[l];
  return s;
}

double cumulative_information(const TransportMatrix& t, std::size_t i, std::size_t j) {
  if (i < 1 || i > t.target_len()) {
    throw IndexError("cumulative_information: target index " + std::to_string(i) +
                     " outside [1, " + std::to_string(t.target_len()) + "]");
  }
  return cumulative_information(t.weights.row(i - 1), j);
}

TransportMatrix aggregate_layers(std::span<const TransportMatrix> layers, LayerAggregation agg) {
  if (layers.empty()) throw DimensionError("aggregate_layers: no layers");
  if (agg == LayerAggregation::kLast) return TransportMatrix{layers.back().weights, -1};
  Tensor out = layers.front().weights;
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (!layers[l].weights.same_shape(out)) {
      throw DimensionError("aggregate_layers: layer shapes differ");
    }
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += layers[l].weights[k];
  }
  const double inv = 1.0 / static_cast<double>(layers.size());
  for (double& v : out.values()) v *= inv;
  return TransportMatrix{std::move(out), -1};
}

nlohmann::json to_json(const TransportMatrix& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.target_len(); ++i) {
    const auto r = t.weights.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  nlohmann::json j{{"I", t.target_len()}, {"J", t.source_len()}, {"rows", std::move(rows)}};
  if (t.layer_index >= 0) j["layer"] = t.layer_index;
  return j;
}

TransportMatrix transport_from_json(const nlohmann::json& j) {
  try {
    const auto I = j.at("I").get<std::size_t>();
    const auto J = j.at("J").get<std::size_t>();
    const auto& rows = j.at("rows");
    if (rows.size() != I) throw FormatError("transport JSON: row count differs from I");
    Tensor w(I, J);
    for (std::size_t i = 0; i < I; ++i) {
      if (rows[i].size() != J) throw FormatError("transport JSON: row width differs from J");
      for (std::size_t c = 0; c < J; ++c) w(i, c) = rows[i][c].get<double>();
    }
    return TransportMatrix{std::move(w), j.value("layer", -1)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("transport JSON: ") + e.what());
  }
}

}  // namespace itst::transport
