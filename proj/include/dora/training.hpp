#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dora/evaluation.hpp"
#include "dora/losses.hpp"
#include "dora/model.hpp"
#include "dora/schema.hpp"
#include "dora/seed.hpp"

namespace dora {

// Uniformly samples min(k, available) priced records per city without
// replacement. Cities with no records contribute nothing. Output is ordered
// by city id.
Dataset sample_support_set(const Dataset& train, std::size_t k, std::uint64_t seed);

struct PretrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 512;
  double lr = 0.005;
  double weight_decay = 0.01;
  losses::PretextLossConfig loss;
  std::uint64_t seed = 0;
  // Restrict the corpus to one property type; empty means all types.
  std::string corpus_filter;
  // Tail of the seeded shuffle held out for pretext F1.
  double holdout_fraction = 0.05;

  void validate() const;
};

struct PretrainEpoch {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over batches
  double cross_entropy = 0.0;
  double contrastive = 0.0;
  double train_macro_f1 = 0.0;
  double train_micro_f1 = 0.0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<PretrainEpoch> history;
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
  double heldout_macro_f1 = 0.0;
  double heldout_micro_f1 = 0.0;
};

// Pre-trains embedders, encoder and pretext head on the pretext target.
// Feature normalization is fitted on the (filtered) corpus and stored in the
// checkpoint. If `log` is set, one tab-separated line per epoch is written.
// Throws NumericalError on a non-finite loss.
PretrainResult pretrain(const Dataset& unlabeled, const ModelConfig& model_config,
                        const PretrainConfig& cfg, std::ostream* log = nullptr);

// A freshly initialized model with no pre-training (DNN baseline).
Checkpoint make_scratch_checkpoint(std::shared_ptr<const FeatureSchema> schema,
                                   const ModelConfig& model_config, Normalizer features,
                                   std::uint64_t seed);

struct FinetuneConfig {
  std::size_t epochs = 200;
  double lr = 0.005;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  // Train only the price head; embedders and encoder stay fixed.
  bool freeze_encoder = false;
  std::size_t k_shots = 5;
  // Adds this weight times the town contrastive loss on Z to the MSE
  // (DNN + CL baseline). Zero disables it.
  double contrastive_weight = 0.0;
  losses::PretextLossConfig contrastive;

  void validate() const;
};

struct FinetuneResult {
  Checkpoint checkpoint;  // target scaler set
  std::vector<double> train_mse;  // per epoch, standardized scale
};

// Full-batch MSE fine-tuning on standardized support prices with a freshly
// initialized price head. `validation`, if given, is only scored (MAPE per
// epoch in the log), never trained on.
FinetuneResult finetune(const Checkpoint& start, const Dataset& support, const FinetuneConfig& cfg,
                        const Dataset* validation = nullptr, std::ostream* log = nullptr);

// Prices in original units for raw (un-normalized) records.
std::vector<double> predict_prices(const Checkpoint& fitted, const Dataset& data);
// Pretext class predictions (argmax) for raw records.
std::vector<std::int32_t> predict_pretext(const Checkpoint& ckpt, const Dataset& data);

enum class Method { kDora, kDnn, kDnnCl, kHa, kLr };
std::string_view method_name(Method m);  // "DoRA", "DNN", "DNN+CL", "HA", "LR"
Method parse_method(std::string_view name);  // case-insensitive; also "dnn-cl"

struct ExperimentConfig {
  Method method = Method::kDora;
  std::size_t k_shots = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  FinetuneConfig finetune;
  std::vector<double> hit_tolerances{10.0};
  double ridge = eval::kDefaultRidge;
  // Contrastive weight of the DNN+CL baseline.
  double dnn_cl_weight = 0.3;
  std::string model_label;  // defaults to method_name
  std::string dataset_label = "data";
};

struct ExperimentInputs {
  const Dataset* train = nullptr;  // labeled pool the support set is drawn from
  const Dataset* test = nullptr;
  const Checkpoint* pretrained = nullptr;  // required for DoRA
  // Used by the DNN and LR paths: scratch architecture and the feature
  // normalizer.
  ModelConfig model_config;
  std::optional<Normalizer> features;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::size_t support_size = 0;
  eval::MetricSet metrics;
};

struct ExperimentReport {
  std::string model;
  std::string dataset;
  std::size_t shots = 0;
  std::vector<double> hit_tolerances;
  std::vector<SeedResult> rows;
  eval::MetricSet mean;
  eval::MetricSet stddev;  // population; 0 for a single seed
};

// For each seed: sample the support set, fit, score on the test set.
ExperimentReport run_experiment(const ExperimentInputs& inputs, const ExperimentConfig& cfg);

// Tab-separated report: a per-seed block followed by an aggregate block of
// mean±std cells.
std::string report_to_tsv(const std::vector<ExperimentReport>& reports);

}  // namespace dora
