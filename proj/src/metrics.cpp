#include "todrr/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <unordered_map>

#include "todrr/error.hpp"

namespace todrr::metrics {
namespace {

bool is_placeholder_at(std::string_view s, std::size_t i, std::size_t& end) {
  static constexpr std::string_view kOpen = "[value_";
  if (s.substr(i, kOpen.size()) != kOpen) return false;
  std::size_t k = i + kOpen.size();
  const std::size_t name_start = k;
  while (k < s.size() && (std::islower(static_cast<unsigned char>(s[k])) ||
                          std::isdigit(static_cast<unsigned char>(s[k])) || s[k] == '_')) {
    ++k;
  }
  if (k == name_start || k >= s.size() || s[k] != ']') return false;
  end = k + 1;
  return true;
}

std::string ngram_key(const TokenSeq& toks, std::size_t start, std::size_t n) {
  std::string key;
  for (std::size_t i = start; i < start + n; ++i) {
    key += toks[i];
    key += '\x1f';
  }
  return key;
}

std::unordered_map<std::string, std::size_t> ngram_histogram(const TokenSeq& toks, std::size_t n) {
  std::unordered_map<std::string, std::size_t> h;
  if (toks.size() < n) return h;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++h[ngram_key(toks, i, n)];
  return h;
}

void require_ref(const TokenSeq& ref) {
  if (ref.empty()) throw UsageError("reference must be non-empty");
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  TokenSeq out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  std::size_t i = 0;
  while (i < lower.size()) {
    const auto c = static_cast<unsigned char>(lower[i]);
    std::size_t end = 0;
    if (std::isspace(c)) {
      flush();
      ++i;
    } else if (c == '[' && is_placeholder_at(lower, i, end)) {
      flush();
      out.emplace_back(lower.substr(i, end - i));
      i = end;
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    } else {
      word += static_cast<char>(c);
      ++i;
    }
  }
  flush();
  return out;
}

NgramCounts& NgramCounts::operator+=(const NgramCounts& o) {
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  cand_len += o.cand_len;
  ref_len += o.ref_len;
  return *this;
}

NgramCounts ngram_counts(const TokenSeq& cand, const TokenSeq& ref) {
  NgramCounts c;
  c.cand_len = cand.size();
  c.ref_len = ref.size();
  for (std::size_t n = 1; n <= kBleuOrder; ++n) {
    const auto ch = ngram_histogram(cand, n);
    const auto rh = ngram_histogram(ref, n);
    std::size_t match = 0;
    std::size_t total = 0;
    for (const auto& [key, count] : ch) {
      total += count;
      auto it = rh.find(key);
      if (it != rh.end()) match += std::min(count, it->second);
    }
    c.matches[n - 1] = match;
    c.totals[n - 1] = total;
  }
  return c;
}

double bleu_from_counts(const NgramCounts& counts, bool smooth) {
  if (counts.cand_len == 0) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < kBleuOrder; ++n) {
    if (counts.totals[n] == 0) continue;
    double num = static_cast<double>(counts.matches[n]);
    if (num == 0.0) {
      if (!smooth) return 0.0;
      num = kBleuEpsilon;
    }
    log_sum += std::log(num / static_cast<double>(counts.totals[n]));
    ++orders;
  }
  const double c = static_cast<double>(counts.cand_len);
  const double r = static_cast<double>(counts.ref_len);
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(orders));
}

double sentence_bleu(const TokenSeq& cand, const TokenSeq& ref, bool smooth) {
  require_ref(ref);
  return bleu_from_counts(ngram_counts(cand, ref), smooth);
}

double corpus_bleu(std::span<const std::pair<TokenSeq, TokenSeq>> pairs) {
  if (pairs.empty()) throw UsageError("corpus_bleu needs at least one pair");
  NgramCounts total;
  for (const auto& [cand, ref] : pairs) {
    require_ref(ref);
    total += ngram_counts(cand, ref);
  }
  return bleu_from_counts(total, true);
}

std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenSeq& cand, const TokenSeq& ref) {
  require_ref(ref);
  if (cand.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(cand, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(cand.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

namespace {

// Depth-first search over candidate positions for the alignment that meets
// the per-type exact quotas and per-stem stem quotas while maximising the
// number of adjacent match pairs (i -> j, i+1 -> j+1), i.e. minimising chunks.
class MeteorAligner {
 public:
  MeteorAligner(const TokenSeq& cand, const TokenSeq& ref) : cand_(cand), ref_(ref) {
    std::map<std::string, std::size_t> cc, rc;
    for (const auto& t : cand) ++cc[t];
    for (const auto& t : ref) ++rc[t];
    std::map<std::string, std::size_t> stem_left_c, stem_left_r;
    for (const auto& [t, n] : cc) {
      const std::size_t e = rc.count(t) ? std::min(n, rc.at(t)) : 0;
      exact_quota_[t] = e;
      stem_left_c[porter_stem(t)] += n - e;
    }
    for (const auto& [t, n] : rc) {
      const std::size_t e = cc.count(t) ? std::min(n, cc.at(t)) : 0;
      stem_left_r[porter_stem(t)] += n - e;
    }
    for (const auto& [s, n] : stem_left_c) {
      auto it = stem_left_r.find(s);
      if (it != stem_left_r.end() && std::min(n, it->second) > 0) stem_quota_[s] = std::min(n, it->second);
    }
    cand_stem_.reserve(cand.size());
    for (const auto& t : cand) cand_stem_.push_back(porter_stem(t));
    ref_stem_.reserve(ref.size());
    for (const auto& t : ref) ref_stem_.push_back(porter_stem(t));
    for (const auto& [t, e] : exact_quota_) required_ += e;
    for (const auto& [s, f] : stem_quota_) required_ += f;
    used_.assign(ref.size(), false);
  }

  MeteorAlignment solve() {
    MeteorAlignment a;
    a.matches = required_;
    if (required_ == 0) return a;
    dfs(0, -1, 0, 0);
    a.chunks = required_ - static_cast<std::size_t>(best_adjacent_);
    return a;
  }

 private:
  static constexpr std::size_t kNodeBudget = 2'000'000;

  void dfs(std::size_t i, long prev_ref, std::size_t matched, long adjacent) {
    if (++nodes_ > kNodeBudget && best_adjacent_ >= 0) return;
    const std::size_t need = required_ - matched;
    if (need > cand_.size() - i) return;
    // Each further match adds at most one adjacency.
    if (best_adjacent_ >= 0 && adjacent + static_cast<long>(need) <= best_adjacent_) return;
    if (need == 0) {
      best_adjacent_ = std::max(best_adjacent_, adjacent);
      return;
    }
    const std::string& tok = cand_[i];
    auto eq = exact_quota_.find(tok);
    auto sq = stem_quota_.find(cand_stem_[i]);
    const bool exact_ok = eq != exact_quota_.end() && eq->second > 0;
    const bool stem_ok = sq != stem_quota_.end() && sq->second > 0;

    auto try_ref = [&](std::size_t j) {
      if (used_[j]) return;
      const bool is_exact = ref_[j] == tok;
      if (is_exact && !exact_ok) return;
      if (!is_exact && !(stem_ok && ref_stem_[j] == cand_stem_[i])) return;
      auto& quota = is_exact ? eq->second : sq->second;
      --quota;
      used_[j] = true;
      const long adj = prev_ref >= 0 && static_cast<long>(j) == prev_ref + 1 ? 1 : 0;
      dfs(i + 1, static_cast<long>(j), matched + 1, adjacent + adj);
      used_[j] = false;
      ++quota;
    };

    if (exact_ok || stem_ok) {
      if (prev_ref >= 0 && static_cast<std::size_t>(prev_ref + 1) < ref_.size()) {
        try_ref(static_cast<std::size_t>(prev_ref + 1));
      }
      for (std::size_t j = 0; j < ref_.size(); ++j) {
        if (prev_ref >= 0 && j == static_cast<std::size_t>(prev_ref + 1)) continue;
        try_ref(j);
      }
    }
    dfs(i + 1, -1, matched, adjacent);
  }

  const TokenSeq& cand_;
  const TokenSeq& ref_;
  std::vector<std::string> cand_stem_, ref_stem_;
  std::map<std::string, std::size_t> exact_quota_;
  std::map<std::string, std::size_t> stem_quota_;
  std::vector<bool> used_;
  std::size_t required_ = 0;
  std::size_t nodes_ = 0;
  long best_adjacent_ = -1;
};

}  // namespace

MeteorAlignment meteor_align(const TokenSeq& cand, const TokenSeq& ref) {
  return MeteorAligner(cand, ref).solve();
}

double meteor(const TokenSeq& cand, const TokenSeq& ref, const MeteorParams& params) {
  require_ref(ref);
  if (cand.empty()) return 0.0;
  const auto a = meteor_align(cand, ref);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double penalty = params.gamma * std::pow(static_cast<double>(a.chunks) / m, params.beta);
  return fmean * (1.0 - penalty);
}

double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw UsageError("cosine_score: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw UsageError("cosine_score: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::string_view to_string(ScoringKind k) {
  switch (k) {
    case ScoringKind::cosine: return "cosine";
    case ScoringKind::bleu: return "bleu";
    case ScoringKind::rouge: return "rouge";
    case ScoringKind::meteor: return "meteor";
  }
  return "?";
}

ScoringKind parse_scoring_kind(std::string_view s) {
  if (s == "cosine") return ScoringKind::cosine;
  if (s == "bleu") return ScoringKind::bleu;
  if (s == "rouge") return ScoringKind::rouge;
  if (s == "meteor") return ScoringKind::meteor;
  throw UsageError("unknown scoring kind \"" + std::string(s) + "\"");
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Eigen::VectorXd HashingEmbedder::embed(std::string_view text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  const auto toks = tokenize(text);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    v[static_cast<Eigen::Index>(fnv1a64(toks[i]) % dim_)] += 1.0;
    if (i + 1 < toks.size()) {
      v[static_cast<Eigen::Index>(fnv1a64(toks[i] + ' ' + toks[i + 1]) % dim_)] += 1.0;
    }
  }
  return v;
}

double score(ScoringKind kind, std::string_view cand, std::string_view ref,
             const SentenceEmbedder* embedder) {
  switch (kind) {
    case ScoringKind::cosine:
      if (embedder == nullptr) throw UsageError("cosine scoring requires a sentence embedder");
      return cosine_score(embedder->embed(cand), embedder->embed(ref));
    case ScoringKind::bleu:
      return sentence_bleu(tokenize(cand), tokenize(ref));
    case ScoringKind::rouge:
      return rouge_l(tokenize(cand), tokenize(ref));
    case ScoringKind::meteor:
      return meteor(tokenize(cand), tokenize(ref));
  }
  throw InvariantError("unhandled scoring kind");
}

Json to_json(const MetricReport& r) {
  return Json{{"bleu", r.bleu}, {"rouge_l", r.rouge_l}, {"meteor", r.meteor}, {"n_examples", r.n_examples}};
}

MetricReport report_from_json(const Json& j) {
  MetricReport r;
  r.bleu = require(j, "bleu").get<double>();
  r.rouge_l = require(j, "rouge_l").get<double>();
  r.meteor = require(j, "meteor").get<double>();
  r.n_examples = require(j, "n_examples").get<std::size_t>();
  return r;
}

}  // namespace todrr::metrics
