#include "itst/policy/trace.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <sstream>

#include "itst/errors.hpp"

namespace itst::policy {

void ReadWriteTrace::validate() const {
  if (src_len == 0) throw FormatError("trace: src_len must be at least 1");
  if (g.size() != tgt_len) {
    throw FormatError("trace: " + std::to_string(g.size()) + " cut-points for tgt_len " +
                      std::to_string(tgt_len));
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < 1 || g[i] > src_len) {
      throw FormatError("trace: g[" + std::to_string(i + 1) + "] = " + std::to_string(g[i]) +
                        " outside [1, " + std::to_string(src_len) + "]");
    }
    if (i > 0 && g[i] < g[i - 1]) {
      throw FormatError("trace: g decreases at position " + std::to_string(i + 1));
    }
  }
}

bool ReadWriteTrace::valid() const noexcept {
  try {
    validate();
    return true;
  } catch (...) {
    return false;
  }
}

ReadWriteTrace waitk_trace(std::size_t k, std::size_t tgt_len, std::size_t src_len) {
  if (k == 0 || tgt_len == 0 || src_len == 0) {
    throw std::invalid_argument("waitk_trace: k, I and J must be at least 1");
  }
  ReadWriteTrace t;
  t.src_len = src_len;
  t.tgt_len = tgt_len;
  t.g.resize(tgt_len);
  for (std::size_t i = 0; i < tgt_len; ++i) t.g[i] = std::min(k + i, src_len);
  return t;
}

nlohmann::json to_json(const ReadWriteTrace& t) {
  nlohmann::json j;
  if (t.sentence_id) j["id"] = *t.sentence_id;
  if (t.delta) j["delta"] = *t.delta;
  j["g"] = t.g;
  j["src_len"] = t.src_len;
  j["tgt_len"] = t.tgt_len;
  j["hyp"] = t.hyp;
  if (!t.hyp_text.empty()) j["hyp_text"] = t.hyp_text;
  j["truncated"] = t.truncated;
  return j;
}

ReadWriteTrace trace_from_json(const nlohmann::json& j) {
  ReadWriteTrace t;
  try {
    t.g = j.at("g").get<std::vector<std::size_t>>();
    t.src_len = j.at("src_len").get<std::size_t>();
    t.tgt_len = j.at("tgt_len").get<std::size_t>();
    t.hyp = j.value("hyp", std::vector<int>{});
    t.truncated = j.value("truncated", false);
    if (j.contains("id")) t.sentence_id = j.at("id").get<std::size_t>();
    if (j.contains("delta")) t.delta = j.at("delta").get<double>();
    t.hyp_text = j.value("hyp_text", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace: ") + e.what());
  }
  t.validate();
  return t;
}

void write_traces(std::ostream& out, const std::vector<ReadWriteTrace>& traces) {
  for (const auto& t : traces) out << to_json(t).dump() << '\n';
}

void write_traces(const std::filesystem::path& path, const std::vector<ReadWriteTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  write_traces(out, traces);
}

std::vector<ReadWriteTrace> read_traces(std::istream& in) {
  std::vector<ReadWriteTrace> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trace_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ReadWriteTrace> read_traces(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_traces(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace itst::policy
