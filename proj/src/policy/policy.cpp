#include "itst/policy/policy.hpp"

#include <algorithm>
#include <stdexcept>

#include "itst/errors.hpp"

namespace itst::policy {

void ModelTranslator::receive(std::span<const int> prefix) { z_ = model_->encode_prefix(prefix); }

Peek ModelTranslator::peek(const model::DecoderState& state) {
  auto out = model_->decode_step(state, z_);
  Peek p;
  p.transport_row = std::move(out.aggregate_row);
  // ties go to the lowest id
  p.token = static_cast<int>(std::max_element(out.logits.begin(), out.logits.end()) -
                             out.logits.begin());
  return p;
}

MatrixTranslator::MatrixTranslator(transport::TransportMatrix t, std::vector<int> tokens)
    : t_(std::move(t)), tokens_(std::move(tokens)) {
  if (t_.weights.empty()) throw DimensionError("MatrixTranslator: empty transport matrix");
}

Peek MatrixTranslator::peek(const model::DecoderState& state) {
  const std::size_t i = state.prefix.size();
  if (i >= t_.target_len()) {
    throw IndexError("MatrixTranslator: no transport row for target position " +
                     std::to_string(i + 1));
  }
  if (received_ == 0 || received_ > t_.source_len()) {
    throw IndexError("MatrixTranslator: " + std::to_string(received_) +
                     " source tokens received for " + std::to_string(t_.source_len()) + " columns");
  }
  const auto row = t_.weights.row(i);
  Peek p;
  p.transport_row.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(received_));
  p.token = i < tokens_.size() ? tokens_[i] : corpus::kEos;
  return p;
}

// ---------------------------------------------------------------------------

StreamingSession::StreamingSession(Translator& translator, std::vector<int> source,
                                   SessionOptions options)
    : translator_(translator), source_(std::move(source)), options_(std::move(options)) {
  if (source_.empty()) throw std::invalid_argument("streaming session: empty source");
  if (!(options_.delta > 0.0 && options_.delta <= 1.0)) {
    throw std::invalid_argument("streaming session: delta must be in (0, 1]");
  }
  cap_ = options_.max_target_len;
  if (cap_ == 0) {
    cap_ = options_.forced_target ? options_.forced_target->size() : 2 * source_.size() + 8;
  }
  if (options_.forced_target && options_.forced_target->empty()) done_ = true;
  translator_.reset();
}

void StreamingSession::read() {
  ++j_;
  ++reads_;
  translator_.receive(std::span<const int>(source_).first(j_));
}

Decision StreamingSession::step() {
  if (done_) throw std::logic_error("streaming session already finished");
  const std::size_t big_j = source_.size();
  if (j_ == 0) {
    read();
    return {Action::kRead, -1};
  }
  Peek p = translator_.peek(state_);
  if (p.transport_row.size() != j_) {
    throw DimensionError("transport row of length " + std::to_string(p.transport_row.size()) +
                         " with " + std::to_string(j_) + " source tokens received");
  }
  double acc = 0.0;
  for (double v : p.transport_row) acc += v;
  bool write = acc >= options_.delta || j_ == big_j;

  const std::size_t i = state_.prefix.size();
  const int token = options_.forced_target ? (*options_.forced_target)[i] : p.token;
  if (write && token == corpus::kEos && j_ < big_j && options_.defer_early_eos) write = false;

  if (!write) {
    read();
    return {Action::kRead, -1};
  }
  state_.prefix.push_back(token);
  state_.g.push_back(j_);
  if (token == corpus::kEos) {
    done_ = true;
  } else if (options_.forced_target && state_.prefix.size() == options_.forced_target->size()) {
    done_ = true;
  } else if (state_.prefix.size() >= cap_) {
    done_ = true;
    truncated_ = true;
  }
  return {Action::kWrite, token};
}

ReadWriteTrace StreamingSession::trace() const {
  ReadWriteTrace t;
  t.g = state_.g;
  t.src_len = source_.size();
  t.tgt_len = state_.prefix.size();
  t.hyp = state_.prefix;
  t.truncated = truncated_;
  t.delta = options_.delta;
  return t;
}

SimulationResult run_simultaneous(Translator& translator, std::span<const int> source,
                                  const SessionOptions& options) {
  StreamingSession s(translator, std::vector<int>(source.begin(), source.end()), options);
  while (!s.done()) s.step();
  return {s.state().prefix, s.trace(), s.reads(), s.writes()};
}

SimulationResult run_simultaneous(const model::Model& model, std::span<const int> source,
                                  const SessionOptions& options) {
  ModelTranslator t(model);
  return run_simultaneous(t, source, options);
}

}  // namespace itst::policy
