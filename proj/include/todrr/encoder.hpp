#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "todrr/corpus.hpp"
#include "todrr/labeled_example.hpp"
#include "todrr/metrics.hpp"

namespace todrr::encoder {

// Word-level vocabulary. Ids 0..3 are reserved for the special tokens.
class Vocab {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kNumSpecial = 4;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Speaker tags interleaved into flattened context streams.
std::string_view speaker_tag(corpus::Speaker s);

// Tokens with frequency >= min_freq, ordered by frequency (desc) then
// lexicographically, after the specials. Speaker tags count once per
// utterance. Throws UsageError on an empty corpus or min_freq == 0.
Vocab build_vocab(std::span<const corpus::Dialogue> corpus, std::size_t min_freq);
Vocab build_vocab(std::span<const LabeledExample> examples, std::size_t min_freq);

enum class Mode { cross, bi };
enum class Distance { euclidean, cosine };
enum class Objective { classification, triplet };

std::string_view to_string(Mode m);
std::string_view to_string(Distance d);
std::string_view to_string(Objective o);
Mode parse_mode(std::string_view s);
Distance parse_distance(std::string_view s);
Objective parse_objective(std::string_view s);

struct TrainConfig {
  double learning_rate = 2e-3;
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double margin = 5.0;
  std::size_t max_seq_len = 128;
  Mode mode = Mode::cross;
  Distance distance = Distance::euclidean;
  // Batch-all averaging: false averages over triplets with positive loss,
  // true over every valid triplet.
  bool average_all_triplets = false;
  std::uint64_t seed = 13;

  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

// All trainable tensors. Biases are stored as column matrices so every
// tensor can be visited uniformly.
struct EncoderParams {
  Eigen::MatrixXd embedding;  // V x d
  Eigen::MatrixXd proj_w;     // d x d
  Eigen::MatrixXd proj_b;     // d x 1
  Eigen::MatrixXd cls_w;      // 2 x d
  Eigen::MatrixXd cls_b;      // 2 x 1
  Eigen::MatrixXd bi_w;       // 2 x 3d
  Eigen::MatrixXd bi_b;       // 2 x 1

  static constexpr std::size_t kNumTensors = 7;
  static const std::array<std::string_view, kNumTensors>& names();

  std::array<Eigen::MatrixXd*, kNumTensors> tensors();
  std::array<const Eigen::MatrixXd*, kNumTensors> tensors() const;

  Eigen::Index dim() const { return proj_w.rows(); }
  EncoderParams zeros_like() const;
  bool all_finite() const;
  void check_shapes(std::size_t vocab_size) const;
};

EncoderParams init_params(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);

struct Model {
  Vocab vocab;
  EncoderParams params;
  TrainConfig config;
  std::string stage;  // free-form provenance tag, e.g. "s1", "s2"
};

Model make_model(Vocab vocab, std::size_t dim, const TrainConfig& config);

// Token-id streams ---------------------------------------------------------

std::vector<int> context_token_ids(const Vocab& v, const corpus::Context& c);
std::vector<int> response_token_ids(const Vocab& v, std::string_view r);

// [CLS] context [SEP] response [SEP], dropping the oldest context tokens
// first when longer than max_len.
std::vector<int> pair_stream(const Vocab& v, const corpus::Context& c, std::string_view r,
                             std::size_t max_len);
// [CLS] tokens [SEP], keeping the newest tokens (context) or the leading
// tokens (response) when truncation is needed.
std::vector<int> single_stream(std::vector<int> body, std::size_t max_len, bool keep_newest);

// Forward passes -------------------------------------------------------------

Eigen::VectorXd encode_stream(const EncoderParams& p, std::span<const int> ids);
Eigen::VectorXd encode_pair(const Model& m, const corpus::Context& c, std::string_view r);
// Pair encoding used by the triplet objective and KNN anchors: the cross
// encoding in cross mode, [context; response] in bi mode.
Eigen::VectorXd encode_for_similarity(const Model& m, const corpus::Context& c, std::string_view r);

struct BiEncoding {
  Eigen::VectorXd context;
  Eigen::VectorXd response;
};
BiEncoding encode_bi(const Model& m, const corpus::Context& c, std::string_view r);

std::array<double, 2> classify(const Model& m, const corpus::Context& c, std::string_view r);
std::array<double, 2> biencoder_classify(const Model& m, const corpus::Context& c, std::string_view r);

// Encodes a standalone text with the response stream layout; lets a trained
// encoder serve as the cosine scoring function's sentence encoder.
class ModelEmbedder final : public metrics::SentenceEmbedder {
 public:
  explicit ModelEmbedder(const Model& m) : model_(m) {}
  Eigen::VectorXd embed(std::string_view text) const override;

 private:
  const Model& model_;
};

// Losses and gradients ------------------------------------------------------

struct LossGrad {
  double loss = 0.0;
  EncoderParams grads;
};

LossGrad class_loss_grad(const Model& m, std::span<const LabeledExample> batch, Mode mode);
LossGrad triplet_loss_grad(const Model& m, std::span<const LabeledExample> batch,
                           const TrainConfig& cfg);

// Loss without gradients, used by finite differences.
double batch_loss(const Model& m, std::span<const LabeledExample> batch, Objective objective,
                  const TrainConfig& cfg);

// Training ----------------------------------------------------------------

struct TrainLog {
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

Model train(Model model, std::span<const LabeledExample> dataset, const TrainConfig& cfg,
            Objective objective, TrainLog* log = nullptr, const EpochCallback& on_epoch = {});

// Learning-rate multiplier for 0-based step `step` of `total` steps.
double lr_multiplier(std::size_t step, std::size_t total, double warmup_fraction);

// Max relative error between analytic and central-difference gradients over
// every parameter entry. `tamper` may modify the analytic gradients before
// comparison (fault-injection fixtures).
double grad_check(const Model& m, std::span<const LabeledExample> batch, Objective objective,
                  const TrainConfig& cfg, double eps,
                  const std::function<void(EncoderParams&)>& tamper = {});

// Checkpoints ---------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

Json to_json(const Model& m);
Model model_from_json(const Json& j);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace todrr::encoder
