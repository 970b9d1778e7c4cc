#include "todrr/encoder.hpp"

#include <cstdlib>
#include <algorithm>
#include <cmath>
#include <map>

#include "todrr/error.hpp"
#include "todrr/random.hpp"

namespace todrr::encoder {

// Vocabulary -----------------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  static const std::array<std::string, kNumSpecial> kSpecials = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};
  const bool has_specials = tokens.size() >= kNumSpecial &&
                            std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin());
  if (!has_specials) tokens.insert(tokens.begin(), kSpecials.begin(), kSpecials.end());
  tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token \"" + tokens_[i] + "\"");
    }
  }
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::string_view speaker_tag(corpus::Speaker s) {
  return s == corpus::Speaker::user ? "<user>" : "<system>";
}

namespace {

class VocabCounter {
 public:
  void add_utterance(const corpus::Utterance& u) {
    ++counts_[std::string(speaker_tag(u.speaker))];
    add_text(u.text);
  }
  void add_text(std::string_view text) {
    for (auto& t : metrics::tokenize(text)) ++counts_[std::move(t)];
  }
  bool empty() const { return counts_.empty(); }

  Vocab build(std::size_t min_freq) const {
    if (min_freq == 0) throw UsageError("min_freq must be >= 1");
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [tok, n] : counts_) {
      if (n >= min_freq) kept.emplace_back(tok, n);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [tok, n] : kept) tokens.push_back(std::move(tok));
    return Vocab(std::move(tokens));
  }

 private:
  std::map<std::string, std::size_t> counts_;  // ordered: ties stay lexicographic
};

}  // namespace

Vocab build_vocab(std::span<const corpus::Dialogue> corpus, std::size_t min_freq) {
  VocabCounter counter;
  for (const auto& d : corpus) {
    for (const auto& u : d.turns) counter.add_utterance(u);
  }
  if (counter.empty()) throw UsageError("cannot build a vocabulary from an empty corpus");
  return counter.build(min_freq);
}

Vocab build_vocab(std::span<const LabeledExample> examples, std::size_t min_freq) {
  VocabCounter counter;
  std::map<std::string, bool> seen_context;
  for (const auto& e : examples) {
    // Each context is counted once, however many examples share it.
    if (!seen_context.emplace(e.context.context_id, true).second) {
      counter.add_text(e.response);
      continue;
    }
    for (const auto& u : e.context.utterances) counter.add_utterance(u);
    counter.add_text(e.response);
  }
  if (counter.empty()) throw UsageError("cannot build a vocabulary from no examples");
  return counter.build(min_freq);
}

// Enums ----------------------------------------------------------------------

std::string_view to_string(Mode m) { return m == Mode::cross ? "cross" : "bi"; }
std::string_view to_string(Distance d) { return d == Distance::euclidean ? "euclidean" : "cosine"; }
std::string_view to_string(Objective o) {
  return o == Objective::classification ? "classification" : "triplet";
}

Mode parse_mode(std::string_view s) {
  if (s == "cross") return Mode::cross;
  if (s == "bi") return Mode::bi;
  throw UsageError("unknown encoder mode \"" + std::string(s) + "\"");
}

Distance parse_distance(std::string_view s) {
  if (s == "euclidean") return Distance::euclidean;
  if (s == "cosine") return Distance::cosine;
  throw UsageError("unknown distance \"" + std::string(s) + "\"");
}

Objective parse_objective(std::string_view s) {
  if (s == "classification") return Objective::classification;
  if (s == "triplet") return Objective::triplet;
  throw UsageError("unknown objective \"" + std::string(s) + "\"");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw UsageError("warmup_fraction must lie in [0, 1)");
  if (weight_decay < 0.0) throw UsageError("weight_decay must be >= 0");
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  if (!(margin > 0.0)) throw UsageError("margin must be > 0");
  if (max_seq_len < 4) throw UsageError("max_seq_len must be >= 4");
}

Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate},
              {"warmup_fraction", c.warmup_fraction},
              {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"margin", c.margin},
              {"max_seq_len", c.max_seq_len},
              {"mode", std::string(to_string(c.mode))},
              {"distance", std::string(to_string(c.distance))},
              {"average_all_triplets", c.average_all_triplets},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.learning_rate = require(j, "learning_rate").get<double>();
  c.warmup_fraction = require(j, "warmup_fraction").get<double>();
  c.weight_decay = require(j, "weight_decay").get<double>();
  c.epochs = require(j, "epochs").get<std::size_t>();
  c.batch_size = require(j, "batch_size").get<std::size_t>();
  c.margin = require(j, "margin").get<double>();
  c.max_seq_len = require(j, "max_seq_len").get<std::size_t>();
  c.mode = parse_mode(require_string(j, "mode"));
  c.distance = parse_distance(require_string(j, "distance"));
  c.average_all_triplets = require(j, "average_all_triplets").get<bool>();
  c.seed = require(j, "seed").get<std::uint64_t>();
  return c;
}

// Parameters -----------------------------------------------------------------

const std::array<std::string_view, EncoderParams::kNumTensors>& EncoderParams::names() {
  static const std::array<std::string_view, kNumTensors> kNames = {
      "embedding", "proj_w", "proj_b", "cls_w", "cls_b", "bi_w", "bi_b"};
  return kNames;
}

std::array<Eigen::MatrixXd*, EncoderParams::kNumTensors> EncoderParams::tensors() {
  return {&embedding, &proj_w, &proj_b, &cls_w, &cls_b, &bi_w, &bi_b};
}

std::array<const Eigen::MatrixXd*, EncoderParams::kNumTensors> EncoderParams::tensors() const {
  return {&embedding, &proj_w, &proj_b, &cls_w, &cls_b, &bi_w, &bi_b};
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z;
  auto dst = z.tensors();
  auto src = tensors();
  for (std::size_t i = 0; i < kNumTensors; ++i) {
    *dst[i] = Eigen::MatrixXd::Zero(src[i]->rows(), src[i]->cols());
  }
  return z;
}

bool EncoderParams::all_finite() const {
  for (const auto* t : tensors()) {
    if (!t->allFinite()) return false;
  }
  return true;
}

void EncoderParams::check_shapes(std::size_t vocab_size) const {
  const Eigen::Index d = dim();
  const auto v = static_cast<Eigen::Index>(vocab_size);
  const bool ok = d > 0 && embedding.rows() == v && embedding.cols() == d && proj_w.cols() == d &&
                  proj_b.rows() == d && proj_b.cols() == 1 && cls_w.rows() == 2 && cls_w.cols() == d &&
                  cls_b.rows() == 2 && cls_b.cols() == 1 && bi_w.rows() == 2 && bi_w.cols() == 3 * d &&
                  bi_b.rows() == 2 && bi_b.cols() == 1;
  if (!ok) throw DataError("encoder parameter shapes are inconsistent");
}

EncoderParams init_params(std::size_t vocab_size, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw UsageError("embedding dimension must be >= 1");
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dim);
  auto xavier = [&](Eigen::Index rows, Eigen::Index cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
    return m;
  };
  EncoderParams p;
  p.embedding.resize(static_cast<Eigen::Index>(vocab_size), d);
  for (Eigen::Index c = 0; c < d; ++c)
    for (Eigen::Index r = 0; r < p.embedding.rows(); ++r) p.embedding(r, c) = rng.normal();
  p.proj_w = xavier(d, d);
  p.proj_b = Eigen::MatrixXd::Zero(d, 1);
  p.cls_w = xavier(2, d);
  p.cls_b = Eigen::MatrixXd::Zero(2, 1);
  p.bi_w = xavier(2, 3 * d);
  p.bi_b = Eigen::MatrixXd::Zero(2, 1);
  return p;
}

Model make_model(Vocab vocab, std::size_t dim, const TrainConfig& config) {
  Model m;
  m.params = init_params(vocab.size(), dim, derive_seed(config.seed, 0x696e6974));
  m.vocab = std::move(vocab);
  m.config = config;
  return m;
}

// Streams --------------------------------------------------------------------

std::vector<int> context_token_ids(const Vocab& v, const corpus::Context& c) {
  std::vector<int> ids;
  for (const auto& u : c.utterances) {
    ids.push_back(v.id(std::string(speaker_tag(u.speaker))));
    for (const auto& t : metrics::tokenize(u.text)) ids.push_back(v.id(t));
  }
  return ids;
}

std::vector<int> response_token_ids(const Vocab& v, std::string_view r) {
  std::vector<int> ids;
  for (const auto& t : metrics::tokenize(r)) ids.push_back(v.id(t));
  return ids;
}

namespace {

std::vector<int> assemble_pair(std::span<const int> ctx, std::span<const int> resp, std::size_t max_len) {
  const std::size_t fixed = 3;
  std::size_t resp_keep = resp.size();
  std::size_t ctx_keep = ctx.size();
  if (fixed + resp_keep + ctx_keep > max_len) {
    if (fixed + resp_keep >= max_len) {
      ctx_keep = 0;
      resp_keep = max_len - fixed;
    } else {
      ctx_keep = max_len - fixed - resp_keep;
    }
  }
  std::vector<int> ids;
  ids.reserve(fixed + ctx_keep + resp_keep);
  ids.push_back(Vocab::kCls);
  ids.insert(ids.end(), ctx.end() - static_cast<std::ptrdiff_t>(ctx_keep), ctx.end());
  ids.push_back(Vocab::kSep);
  ids.insert(ids.end(), resp.begin(), resp.begin() + static_cast<std::ptrdiff_t>(resp_keep));
  ids.push_back(Vocab::kSep);
  return ids;
}

}  // namespace

std::vector<int> pair_stream(const Vocab& v, const corpus::Context& c, std::string_view r,
                             std::size_t max_len) {
  return assemble_pair(context_token_ids(v, c), response_token_ids(v, r), max_len);
}

std::vector<int> single_stream(std::vector<int> body, std::size_t max_len, bool keep_newest) {
  const std::size_t keep = std::min(body.size(), max_len - 2);
  std::vector<int> ids;
  ids.reserve(keep + 2);
  ids.push_back(Vocab::kCls);
  if (keep_newest) {
    ids.insert(ids.end(), body.end() - static_cast<std::ptrdiff_t>(keep), body.end());
  } else {
    ids.insert(ids.end(), body.begin(), body.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  ids.push_back(Vocab::kSep);
  return ids;
}

// Forward / backward core ---------------------------------------------------

namespace {

struct StreamState {
  std::span<const int> ids;
  Eigen::VectorXd pooled;
  Eigen::VectorXd out;
};

StreamState forward_stream(const EncoderParams& p, std::span<const int> ids) {
  StreamState s;
  s.ids = ids;
  s.pooled = Eigen::VectorXd::Zero(p.dim());
  for (int id : ids) s.pooled += p.embedding.row(id).transpose();
  s.pooled /= static_cast<double>(ids.size());
  s.out = (p.proj_w * s.pooled + p.proj_b.col(0)).array().tanh().matrix();
  return s;
}

void backward_stream(const EncoderParams& p, const StreamState& s, const Eigen::VectorXd& d_out,
                     EncoderParams& g) {
  const Eigen::VectorXd dz = d_out.cwiseProduct((1.0 - s.out.array().square()).matrix());
  g.proj_w.noalias() += dz * s.pooled.transpose();
  g.proj_b.col(0) += dz;
  const Eigen::VectorXd dh = p.proj_w.transpose() * dz / static_cast<double>(s.ids.size());
  for (int id : s.ids) g.embedding.row(id) += dh.transpose();
}

// Returns log-softmax probabilities for two logits.
Eigen::Vector2d log_softmax2(const Eigen::Vector2d& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
  return logits.array() - lse;
}

struct Prepared {
  std::vector<int> pair;
  std::vector<int> ctx;
  std::vector<int> resp;
  int label = 0;
};

std::vector<Prepared> prepare(const Model& m, std::span<const LabeledExample> batch, bool need_pair,
                              bool need_bi) {
  std::vector<Prepared> out;
  out.reserve(batch.size());
  const std::size_t max_len = m.config.max_seq_len;
  for (const auto& e : batch) {
    Prepared p;
    p.label = e.label;
    auto ctx = context_token_ids(m.vocab, e.context);
    auto resp = response_token_ids(m.vocab, e.response);
    if (need_pair) p.pair = assemble_pair(ctx, resp, max_len);
    if (need_bi) {
      p.ctx = single_stream(std::move(ctx), max_len, true);
      p.resp = single_stream(std::move(resp), max_len, false);
    }
    out.push_back(std::move(p));
  }
  return out;
}

Eigen::VectorXd bi_features(const Eigen::VectorXd& u, const Eigen::VectorXd& w) {
  const Eigen::Index d = u.size();
  Eigen::VectorXd f(3 * d);
  f << u, w, (u - w).cwiseAbs();
  return f;
}

// Mean cross-entropy; gradients accumulated into g when non-null.
double class_loss_prepared(const EncoderParams& p, std::span<const Prepared> batch, Mode mode,
                           EncoderParams* g) {
  if (batch.empty()) throw UsageError("classification loss needs a non-empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  const Eigen::Index d = p.dim();
  double loss = 0.0;
  for (const auto& ex : batch) {
    if (mode == Mode::cross) {
      const StreamState s = forward_stream(p, ex.pair);
      const Eigen::Vector2d logits = p.cls_w * s.out + p.cls_b.col(0);
      const Eigen::Vector2d logp = log_softmax2(logits);
      loss -= logp[ex.label];
      if (g == nullptr) continue;
      Eigen::Vector2d dlogits = logp.array().exp();
      dlogits[ex.label] -= 1.0;
      dlogits *= scale;
      g->cls_w.noalias() += dlogits * s.out.transpose();
      g->cls_b.col(0) += dlogits;
      backward_stream(p, s, p.cls_w.transpose() * dlogits, *g);
    } else {
      const StreamState su = forward_stream(p, ex.ctx);
      const StreamState sw = forward_stream(p, ex.resp);
      const Eigen::VectorXd f = bi_features(su.out, sw.out);
      const Eigen::Vector2d logits = p.bi_w * f + p.bi_b.col(0);
      const Eigen::Vector2d logp = log_softmax2(logits);
      loss -= logp[ex.label];
      if (g == nullptr) continue;
      Eigen::Vector2d dlogits = logp.array().exp();
      dlogits[ex.label] -= 1.0;
      dlogits *= scale;
      g->bi_w.noalias() += dlogits * f.transpose();
      g->bi_b.col(0) += dlogits;
      const Eigen::VectorXd df = p.bi_w.transpose() * dlogits;
      const Eigen::VectorXd sign = (su.out - sw.out).unaryExpr([](double x) {
        return static_cast<double>((x > 0.0) - (x < 0.0));
      });
      const Eigen::VectorXd dabs = df.segment(2 * d, d).cwiseProduct(sign);
      backward_stream(p, su, df.segment(0, d) + dabs, *g);
      backward_stream(p, sw, df.segment(d, d) - dabs, *g);
    }
  }
  return loss * scale;
}

double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Distance kind) {
  if (kind == Distance::euclidean) return (a - b).norm();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

// d distance(a, b) / d a.
Eigen::VectorXd distance_grad(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Distance kind) {
  if (kind == Distance::euclidean) {
    const double dist = (a - b).norm();
    if (dist == 0.0) return Eigen::VectorXd::Zero(a.size());
    return (a - b) / dist;
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return Eigen::VectorXd::Zero(a.size());
  const double cos = a.dot(b) / (na * nb);
  return -(b / (na * nb) - cos * a / (na * na));
}

double triplet_loss_prepared(const EncoderParams& p, std::span<const Prepared> batch,
                             const TrainConfig& cfg, EncoderParams* g) {
  const std::size_t n = batch.size();
  const bool has_pos = std::any_of(batch.begin(), batch.end(), [](const Prepared& e) { return e.label == 1; });
  const bool has_neg = std::any_of(batch.begin(), batch.end(), [](const Prepared& e) { return e.label == 0; });
  if (!has_pos || !has_neg) throw DataError("triplet loss needs both labels in the batch");

  const bool bi = cfg.mode == Mode::bi;
  const Eigen::Index d = p.dim();
  std::vector<StreamState> states;
  std::vector<StreamState> resp_states;
  std::vector<Eigen::VectorXd> enc;
  states.reserve(n);
  enc.reserve(n);
  for (const auto& ex : batch) {
    if (bi) {
      states.push_back(forward_stream(p, ex.ctx));
      resp_states.push_back(forward_stream(p, ex.resp));
      Eigen::VectorXd e(2 * d);
      e << states.back().out, resp_states.back().out;
      enc.push_back(std::move(e));
    } else {
      states.push_back(forward_stream(p, ex.pair));
      enc.push_back(states.back().out);
    }
  }
  Eigen::MatrixXd dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      dist(i, j) = dist(j, i) = distance(enc[i], enc[j], cfg.distance);
    }
  }

  // coef(i, j): d loss_sum / d dist(i, j), before averaging.
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(n, n);
  double total = 0.0;
  std::size_t active = 0;
  std::size_t valid = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t q = 0; q < n; ++q) {
      if (q == a || batch[q].label != batch[a].label) continue;
      const double base = dist(a, q) + cfg.margin;
      for (std::size_t r = 0; r < n; ++r) {
        if (batch[r].label == batch[a].label) continue;
        ++valid;
        const double l = base - dist(a, r);
        if (l > 0.0) {
          total += l;
          ++active;
          coef(a, q) += 1.0;
          coef(a, r) -= 1.0;
        }
      }
    }
  }
  const std::size_t denom = cfg.average_all_triplets ? valid : active;
  if (denom == 0 || active == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(denom);
  if (g != nullptr) {
    std::vector<Eigen::VectorXd> d_out(n, Eigen::VectorXd::Zero(enc[0].size()));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double c = coef(i, j);
        if (c == 0.0) continue;
        d_out[i] += c * scale * distance_grad(enc[i], enc[j], cfg.distance);
        d_out[j] += c * scale * distance_grad(enc[j], enc[i], cfg.distance);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (bi) {
        backward_stream(p, states[i], d_out[i].head(d), *g);
        backward_stream(p, resp_states[i], d_out[i].tail(d), *g);
      } else {
        backward_stream(p, states[i], d_out[i], *g);
      }
    }
  }
  return total * scale;
}

}  // namespace

Eigen::VectorXd encode_stream(const EncoderParams& p, std::span<const int> ids) {
  return forward_stream(p, ids).out;
}

Eigen::VectorXd encode_pair(const Model& m, const corpus::Context& c, std::string_view r) {
  return encode_stream(m.params, pair_stream(m.vocab, c, r, m.config.max_seq_len));
}

Eigen::VectorXd encode_for_similarity(const Model& m, const corpus::Context& c, std::string_view r) {
  if (m.config.mode == Mode::cross) return encode_pair(m, c, r);
  const BiEncoding enc = encode_bi(m, c, r);
  Eigen::VectorXd e(enc.context.size() + enc.response.size());
  e << enc.context, enc.response;
  return e;
}

BiEncoding encode_bi(const Model& m, const corpus::Context& c, std::string_view r) {
  const std::size_t max_len = m.config.max_seq_len;
  return {encode_stream(m.params, single_stream(context_token_ids(m.vocab, c), max_len, true)),
          encode_stream(m.params, single_stream(response_token_ids(m.vocab, r), max_len, false))};
}

namespace {
std::array<double, 2> softmax_pair(const Eigen::Vector2d& logits) {
  const Eigen::Vector2d lp = log_softmax2(logits);
  return {std::exp(lp[0]), std::exp(lp[1])};
}
}  // namespace

std::array<double, 2> classify(const Model& m, const corpus::Context& c, std::string_view r) {
  const Eigen::VectorXd e = encode_pair(m, c, r);
  return softmax_pair(m.params.cls_w * e + m.params.cls_b.col(0));
}

std::array<double, 2> biencoder_classify(const Model& m, const corpus::Context& c, std::string_view r) {
  const BiEncoding enc = encode_bi(m, c, r);
  return softmax_pair(m.params.bi_w * bi_features(enc.context, enc.response) + m.params.bi_b.col(0));
}

Eigen::VectorXd ModelEmbedder::embed(std::string_view text) const {
  return encode_stream(model_.params,
                       single_stream(response_token_ids(model_.vocab, text), model_.config.max_seq_len, false));
}

LossGrad class_loss_grad(const Model& m, std::span<const LabeledExample> batch, Mode mode) {
  LossGrad out;
  out.grads = m.params.zeros_like();
  const auto prepared = prepare(m, batch, mode == Mode::cross, mode == Mode::bi);
  out.loss = class_loss_prepared(m.params, prepared, mode, &out.grads);
  return out;
}

LossGrad triplet_loss_grad(const Model& m, std::span<const LabeledExample> batch, const TrainConfig& cfg) {
  LossGrad out;
  out.grads = m.params.zeros_like();
  const auto prepared = prepare(m, batch, cfg.mode == Mode::cross, cfg.mode == Mode::bi);
  out.loss = triplet_loss_prepared(m.params, prepared, cfg, &out.grads);
  return out;
}

double batch_loss(const Model& m, std::span<const LabeledExample> batch, Objective objective,
                  const TrainConfig& cfg) {
  if (objective == Objective::classification) {
    const auto prepared = prepare(m, batch, cfg.mode == Mode::cross, cfg.mode == Mode::bi);
    return class_loss_prepared(m.params, prepared, cfg.mode, nullptr);
  }
  const auto prepared = prepare(m, batch, cfg.mode == Mode::cross, cfg.mode == Mode::bi);
  return triplet_loss_prepared(m.params, prepared, cfg, nullptr);
}

// Training -------------------------------------------------------------------

double lr_multiplier(std::size_t step, std::size_t total, double warmup_fraction) {
  const auto warmup = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return 0.0;
  return static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

namespace {

class AdamW {
 public:
  AdamW(const EncoderParams& like, double weight_decay)
      : m_(like.zeros_like()), v_(like.zeros_like()), weight_decay_(weight_decay) {}

  void step(EncoderParams& p, const EncoderParams& g, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto params = p.tensors();
    auto grads = g.tensors();
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    for (std::size_t i = 0; i < EncoderParams::kNumTensors; ++i) {
      Eigen::MatrixXd& w = *params[i];
      // Biases are exempt from weight decay.
      if (w.cols() != 1) w *= 1.0 - lr * weight_decay_;
      ms[i]->array() = kBeta1 * ms[i]->array() + (1.0 - kBeta1) * grads[i]->array();
      vs[i]->array() = kBeta2 * vs[i]->array() + (1.0 - kBeta2) * grads[i]->array().square();
      w.array() -= lr * (ms[i]->array() / bc1) / ((vs[i]->array() / bc2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-6;
  EncoderParams m_;
  EncoderParams v_;
  double weight_decay_;
  std::size_t t_ = 0;
};

std::vector<std::vector<std::size_t>> make_batches(std::span<const Prepared> data, std::size_t batch_size,
                                                   bool stratify, Rng& rng) {
  const std::size_t n = data.size();
  std::size_t n_batches = (n + batch_size - 1) / batch_size;
  std::vector<std::vector<std::size_t>> batches;
  if (!stratify) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t end = std::min(n, (b + 1) * batch_size);
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (data[i].label == 1 ? pos : neg).push_back(i);
  rng.shuffle(pos);
  rng.shuffle(neg);
  n_batches = std::min({n_batches, pos.size(), neg.size()});
  batches.resize(n_batches);
  for (std::size_t i = 0; i < pos.size(); ++i) batches[i % n_batches].push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) batches[i % n_batches].push_back(neg[i]);
  for (auto& b : batches) rng.shuffle(b);
  return batches;
}

}  // namespace

Model train(Model model, std::span<const LabeledExample> dataset, const TrainConfig& cfg,
            Objective objective, TrainLog* log, const EpochCallback& on_epoch) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  const bool triplet = objective == Objective::triplet;
  if (triplet) {
    const bool has_pos = std::any_of(dataset.begin(), dataset.end(), [](const auto& e) { return e.label == 1; });
    const bool has_neg = std::any_of(dataset.begin(), dataset.end(), [](const auto& e) { return e.label == 0; });
    if (!has_pos || !has_neg) throw DataError("triplet training needs examples of both labels");
  }
  model.config = cfg;
  if (cfg.epochs == 0) return model;

  const auto data = prepare(model, dataset, cfg.mode == Mode::cross, cfg.mode == Mode::bi);

  Rng rng(derive_seed(cfg.seed, 0x747261696e));
  AdamW opt(model.params, cfg.weight_decay);
  std::size_t step = 0;
  std::size_t total_steps = 0;
  std::vector<std::vector<std::vector<std::size_t>>> epoch_batches;
  epoch_batches.reserve(cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    epoch_batches.push_back(make_batches(data, cfg.batch_size, triplet, rng));
    total_steps += epoch_batches.back().size();
  }

  std::vector<Prepared> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& idx : epoch_batches[epoch]) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(data[i]);
      EncoderParams grads = model.params.zeros_like();
      const double loss = triplet ? triplet_loss_prepared(model.params, batch, cfg, &grads)
                                  : class_loss_prepared(model.params, batch, cfg.mode, &grads);
      loss_sum += loss;
      opt.step(model.params, grads, cfg.learning_rate * lr_multiplier(step, total_steps, cfg.warmup_fraction));
      ++step;
    }
    if (!model.params.all_finite()) throw InvariantError("non-finite parameters after epoch " + std::to_string(epoch));
    const double mean = loss_sum / static_cast<double>(epoch_batches[epoch].size());
    if (log != nullptr) log->epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  if (log != nullptr) log->steps = step;
  return model;
}

double grad_check(const Model& m, std::span<const LabeledExample> batch, Objective objective,
                  const TrainConfig& cfg, double eps, const std::function<void(EncoderParams&)>& tamper) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw UsageError("grad_check eps must lie in (0, 1e-3]");
  Model work = m;
  work.config.max_seq_len = cfg.max_seq_len;
  LossGrad analytic = objective == Objective::classification ? class_loss_grad(work, batch, cfg.mode)
                                                             : triplet_loss_grad(work, batch, cfg);
  if (tamper) tamper(analytic.grads);

  const auto prepared = prepare(work, batch, cfg.mode == Mode::cross, cfg.mode == Mode::bi);
  auto loss_at = [&] {
    return objective == Objective::classification ? class_loss_prepared(work.params, prepared, cfg.mode, nullptr)
                                                  : triplet_loss_prepared(work.params, prepared, cfg, nullptr);
  };

  double worst = 0.0;
  auto params = work.params.tensors();
  auto grads = analytic.grads.tensors();
  for (std::size_t t = 0; t < EncoderParams::kNumTensors; ++t) {
    Eigen::MatrixXd& w = *params[t];
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double saved = w.data()[k];
      w.data()[k] = saved + eps;
      const double up = loss_at();
      w.data()[k] = saved - eps;
      const double down = loss_at();
      w.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = grads[t]->data()[k];
      const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-6});
      worst = std::max(worst, std::abs(numeric - exact) / denom);
    }
  }
  return worst;
}

// Checkpoints ------------------------------------------------------------------

namespace {

Json tensor_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd tensor_from_json(const Json& j) {
  const auto rows = require(j, "rows").get<Eigen::Index>();
  const auto cols = require(j, "cols").get<Eigen::Index>();
  const auto data = require(j, "data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw DataError("tensor data size does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace

Json to_json(const Model& m) {
  Json tensors = Json::object();
  auto ts = m.params.tensors();
  for (std::size_t i = 0; i < EncoderParams::kNumTensors; ++i) {
    tensors[std::string(EncoderParams::names()[i])] = tensor_to_json(*ts[i]);
  }
  return Json{{"format_version", kCheckpointVersion},
              {"dim", m.params.dim()},
              {"vocab_size", m.vocab.size()},
              {"stage", m.stage},
              {"vocab", m.vocab.tokens()},
              {"train_config", to_json(m.config)},
              {"tensors", tensors}};
}

Model model_from_json(const Json& j) {
  const int version = require(j, "format_version").get<int>();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint format_version " + std::to_string(version));
  }
  Model m;
  m.vocab = Vocab(require(j, "vocab").get<std::vector<std::string>>());
  m.config = train_config_from_json(require(j, "train_config"));
  m.stage = require_string(j, "stage");
  const Json& tensors = require(j, "tensors");
  auto ts = m.params.tensors();
  for (std::size_t i = 0; i < EncoderParams::kNumTensors; ++i) {
    *ts[i] = tensor_from_json(require(tensors, EncoderParams::names()[i]));
  }
  m.params.check_shapes(m.vocab.size());
  if (require(j, "dim").get<Eigen::Index>() != m.params.dim()) throw DataError("checkpoint dim mismatch");
  if (!m.params.all_finite()) throw DataError("checkpoint contains non-finite values");
  return m;
}

Model load_checkpoint(const std::filesystem::path& path) {
  try {
    return model_from_json(Json::parse(read_text_file(path)));
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace todrr::encoder
