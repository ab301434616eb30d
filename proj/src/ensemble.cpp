#include "gtp/ensemble.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "gtp/error.hpp"

namespace gtp {

void PredictionSet::validate(double tolerance) const {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!seen.insert(r.sample_id).second) throw ValidationError("duplicate sample id '" + r.sample_id + "'");
    double s = 0.0;
    for (double p : r.probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw ValidationError("sample '" + r.sample_id + "' has a negative or non-finite probability");
      }
      s += p;
    }
    if (std::abs(s - 1.0) > tolerance) {
      throw ValidationError("probabilities of sample '" + r.sample_id + "' sum to " + std::to_string(s));
    }
    if (r.label && *r.label >= kClassNames.size()) throw ValidationError("label out of range for '" + r.sample_id + "'");
  }
}

std::vector<std::size_t> PredictionSet::labels() const {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    if (!r.label) throw ValidationError("prediction set '" + model_id + "' has no label for '" + r.sample_id + "'");
    out.push_back(*r.label);
  }
  return out;
}

std::vector<Probs> PredictionSet::probabilities() const {
  std::vector<Probs> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.probs);
  return out;
}

std::vector<std::size_t> PredictionSet::argmax_classes() const {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(argmax(r.probs));
  return out;
}

std::string format_predictions(const PredictionSet& set) {
  std::string out = "sample_id,p_silicosis,p_normal,p_bacterial,p_viral,label\n";
  char buf[32];
  for (const auto& r : set.rows) {
    out += r.sample_id;
    for (double p : r.probs) {
      std::snprintf(buf, sizeof buf, ",%.17g", p);
      out += buf;
    }
    out += ',';
    if (r.label) out += std::to_string(*r.label);
    out += '\n';
  }
  return out;
}

void write_predictions(const PredictionSet& set, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write predictions to '" + path + "'");
  f << format_predictions(set);
  if (!f) throw IoError("failed writing predictions to '" + path + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

double parse_double(const std::string& text, std::size_t line) {
  const std::string t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) throw ParseError("invalid probability '" + t + "'", line);
  return v;
}

std::size_t parse_label(const std::string& text, std::size_t line) {
  std::size_t v = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec == std::errc() && ptr == last) {
    if (v >= kClassNames.size()) throw ParseError("label " + text + " out of range", line);
    return v;
  }
  try {
    return class_index(text);
  } catch (const ConfigError&) {
    throw ParseError("unknown label '" + text + "'", line);
  }
}

}  // namespace

PredictionSet parse_predictions(const std::string& text, const std::string& model_id) {
  PredictionSet set;
  set.model_id = model_id;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (trim(line) != "sample_id,p_silicosis,p_normal,p_bacterial,p_viral,label" &&
          trim(line) != "sample_id,p_silicosis,p_normal,p_bacterial,p_viral") {
        throw ParseError("unexpected prediction header '" + line + "'", line_no);
      }
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 5 && fields.size() != 6) {
      throw ParseError("expected 5 or 6 fields, got " + std::to_string(fields.size()), line_no);
    }
    Prediction p;
    p.sample_id = trim(fields[0]);
    if (p.sample_id.empty()) throw ParseError("empty sample id", line_no);
    double sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      p.probs[k] = parse_double(fields[k + 1], line_no);
      if (!(p.probs[k] >= 0.0) || !std::isfinite(p.probs[k])) {
        throw ValidationError("negative or non-finite probability at line " + std::to_string(line_no));
      }
      sum += p.probs[k];
    }
    if (std::abs(sum - 1.0) > 1e-4) {
      throw ValidationError("probabilities at line " + std::to_string(line_no) + " sum to " + std::to_string(sum));
    }
    if (fields.size() == 6) {
      const std::string label = trim(fields[5]);
      if (!label.empty()) p.label = parse_label(label, line_no);
    }
    if (!seen.insert(p.sample_id).second) {
      throw ParseError("duplicate sample id '" + p.sample_id + "'", line_no);
    }
    set.rows.push_back(std::move(p));
  }
  if (!header_seen) throw ParseError("empty prediction file");
  return set;
}

PredictionSet read_predictions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read predictions from '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_predictions(buf.str(), std::filesystem::path(path).stem().string());
}

std::string to_string(EnsembleMethod method) {
  switch (method) {
    case EnsembleMethod::MaxVote:
      return "maxvote";
    case EnsembleMethod::Average:
      return "average";
    case EnsembleMethod::Weighted:
      return "weighted";
  }
  return "unknown";
}

EnsembleMethod parse_ensemble_method(const std::string& text) {
  if (text == "maxvote") return EnsembleMethod::MaxVote;
  if (text == "average") return EnsembleMethod::Average;
  if (text == "weighted") return EnsembleMethod::Weighted;
  throw ConfigError("unknown ensemble method '" + text + "' (expected maxvote, average or weighted)");
}

void check_aligned(std::span<const PredictionSet> sets) {
  if (sets.empty()) throw ConfigError("ensemble needs at least one prediction set");
  const auto& ref = sets[0];
  for (std::size_t s = 1; s < sets.size(); ++s) {
    const auto& other = sets[s];
    const std::size_t n = std::min(ref.size(), other.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (ref.rows[i].sample_id != other.rows[i].sample_id) {
        throw AlignmentError("prediction sets '" + ref.model_id + "' and '" + other.model_id + "' differ at row " +
                             std::to_string(i + 1) + ": '" + ref.rows[i].sample_id + "' vs '" +
                             other.rows[i].sample_id + "'");
      }
    }
    if (ref.size() != other.size()) {
      throw AlignmentError("prediction sets '" + ref.model_id + "' and '" + other.model_id + "' have " +
                           std::to_string(ref.size()) + " and " + std::to_string(other.size()) + " rows");
    }
  }
}

std::vector<std::size_t> max_vote(std::span<const PredictionSet> sets) {
  check_aligned(sets);
  const std::size_t n = sets[0].size();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<std::size_t, 4> votes{};
    std::array<std::vector<double>, 4> mass;
    for (const auto& s : sets) {
      ++votes[argmax(s.rows[i].probs)];
      for (std::size_t k = 0; k < 4; ++k) mass[k].push_back(s.rows[i].probs[k]);
    }
    std::array<double, 4> summed{};
    for (std::size_t k = 0; k < 4; ++k) {
      // Sorted so the tie-break does not depend on the order of the sets.
      std::sort(mass[k].begin(), mass[k].end());
      for (double v : mass[k]) summed[k] += v;
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < 4; ++k) {
      if (votes[k] > votes[best] || (votes[k] == votes[best] && summed[k] > summed[best])) best = k;
    }
    out[i] = best;
  }
  return out;
}

PredictionSet vote_fractions(std::span<const PredictionSet> sets) {
  check_aligned(sets);
  PredictionSet out;
  out.model_id = "maxvote";
  out.rows = sets[0].rows;
  const double m = static_cast<double>(sets.size());
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    std::array<std::size_t, 4> votes{};
    for (const auto& s : sets) ++votes[argmax(s.rows[i].probs)];
    for (std::size_t k = 0; k < 4; ++k) out.rows[i].probs[k] = static_cast<double>(votes[k]) / m;
  }
  return out;
}

std::vector<double> normalize_weights(std::span<const double> weights, std::size_t m, bool* renormalized) {
  if (weights.size() != m) {
    throw ConfigError("got " + std::to_string(weights.size()) + " weights for " + std::to_string(m) + " models");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("ensemble weights must be finite and nonnegative");
    total += w;
  }
  if (total <= 0.0) throw ConfigError("ensemble weights sum to zero");
  if (renormalized) *renormalized = std::abs(total - 1.0) > 1e-12;
  std::vector<double> out(weights.begin(), weights.end());
  if (total != 1.0)
    for (double& w : out) w /= total;
  return out;
}

PredictionSet weighted_average(std::span<const PredictionSet> sets, std::span<const double> weights) {
  check_aligned(sets);
  const auto w = normalize_weights(weights, sets.size());
  PredictionSet out;
  out.model_id = "weighted";
  out.rows = sets[0].rows;
  std::vector<std::pair<double, double>> terms;
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      terms.clear();
      for (std::size_t s = 0; s < sets.size(); ++s)
        if (w[s] > 0.0) terms.emplace_back(sets[s].rows[i].probs[k], w[s]);
      // Sorting makes the result independent of the order of the sets, and
      // accumulating offsets from the smallest term keeps identical inputs
      // (and a single selected model) exact.
      std::sort(terms.begin(), terms.end());
      const double base = terms.front().first;
      double acc = 0.0;
      for (const auto& [v, wt] : terms) acc += wt * (v - base);
      out.rows[i].probs[k] = base + acc;
    }
  }
  return out;
}

PredictionSet average(std::span<const PredictionSet> sets) {
  if (sets.empty()) throw ConfigError("ensemble needs at least one prediction set");
  const std::vector<double> w(sets.size(), 1.0 / static_cast<double>(sets.size()));
  auto out = weighted_average(sets, w);
  out.model_id = "average";
  return out;
}

}  // namespace gtp
