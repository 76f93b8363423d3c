#pragma once
// Read/write traces: the contract between the streaming policy and the
// latency metrics. One JSON object per line on disk.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace itst::policy {

/// g[i] is the number of source tokens received when target token i+1 was
/// written. Valid traces have 1 <= g[i] <= src_len and g non-decreasing.
struct ReadWriteTrace {
  std::vector<std::size_t> g;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> hyp;
  bool truncated = false;

  std::optional<std::size_t> sentence_id;
  std::optional<double> delta;
  std::string hyp_text;

  /// Throws FormatError describing the first violated invariant.
  void validate() const;
  bool valid() const noexcept;
};

/// Wait-k baseline: g_i = min(k + i - 1, J). Throws invalid_argument if k, I or
/// J is zero.
ReadWriteTrace waitk_trace(std::size_t k, std::size_t tgt_len, std::size_t src_len);

nlohmann::json to_json(const ReadWriteTrace& t);
ReadWriteTrace trace_from_json(const nlohmann::json& j);

void write_traces(std::ostream& out, const std::vector<ReadWriteTrace>& traces);
void write_traces(const std::filesystem::path& path, const std::vector<ReadWriteTrace>& traces);
/// Parse errors name the offending line number.
std::vector<ReadWriteTrace> read_traces(std::istream& in);
std::vector<ReadWriteTrace> read_traces(const std::filesystem::path& path);

}  // namespace itst::policy
