#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dora/nn.hpp"
#include "dora/schema.hpp"

namespace dora {

using nn::Matrix;
using nn::Vector;

enum class FeatureSubset : std::uint8_t { kRF, kRFPoI, kRFEconGeo, kAll };

std::string_view to_string(FeatureSubset subset);  // "RF", "RF+PoI", "RF+EconGeo", "All"
FeatureSubset parse_feature_subset(std::string_view text);
inline bool uses_econ_geo(FeatureSubset s) {
  return s == FeatureSubset::kRFEconGeo || s == FeatureSubset::kAll;
}
inline bool uses_poi(FeatureSubset s) { return s == FeatureSubset::kRFPoI || s == FeatureSubset::kAll; }

inline constexpr std::string_view kTownTarget = "town";

struct ModelConfig {
  std::size_t d_nr = 16;
  std::size_t d_cr = 10;  // per categorical feature
  std::size_t d_econ_geo = 16;
  std::size_t d_poi = 16;
  std::size_t d_z = 256;
  // Encoder widths as multiples of d_z; the last must be 1.
  std::vector<std::size_t> encoder_multipliers{2, 4, 8, 4, 2, 1};
  // Hidden Mish layers of width d_z in each prediction head.
  std::size_t head_hidden_layers = 1;
  FeatureSubset feature_subset = FeatureSubset::kAll;
  // "town", or the name of a categorical column. A categorical target is
  // removed from the model inputs.
  std::string pretext_target{kTownTarget};

  void validate(const FeatureSchema& schema) const;
  bool operator==(const ModelConfig&) const = default;
};

// Column-major feature matrices for a set of records.
struct Batch {
  Matrix numerical_re;
  Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic> categorical_re;
  Matrix econ_geo;
  Matrix poi;
  std::vector<std::int32_t> towns;
  std::vector<std::int32_t> cities;
  Vector prices;  // empty unless every record is priced

  std::size_t size() const { return towns.size(); }
};

Batch make_batch(const Dataset& data);
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

enum Component : unsigned {
  kEmbedders = 1u << 0,
  kEncoder = 1u << 1,
  kPretextHead = 1u << 2,
  kPriceHead = 1u << 3,
  kPretrainComponents = kEmbedders | kEncoder | kPretextHead,
  kFinetuneComponents = kEmbedders | kEncoder | kPriceHead,
};

struct ModelParams {
  nn::Mlp embed_nr;
  std::vector<Matrix> embed_cr;  // one (vocab x d_cr) table per categorical feature
  nn::Mlp embed_econ_geo;
  nn::Mlp embed_poi;
  nn::Mlp encoder;
  nn::Mlp pretext_head;
  nn::Mlp price_head;
};

struct ModelGrads {
  nn::MlpGrad embed_nr;
  std::vector<Matrix> embed_cr;
  nn::MlpGrad embed_econ_geo;
  nn::MlpGrad embed_poi;
  nn::MlpGrad encoder;
  nn::MlpGrad pretext_head;
  nn::MlpGrad price_head;
};

class DoraModel {
 public:
  // Recorded intermediate values of one forward pass.
  struct Forward {
    nn::GradTape nr_tape, econ_geo_tape, poi_tape, encoder_tape, pretext_tape, price_tape;
    Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic> categories;
    Matrix embedding;
    Matrix z;
    Matrix logits;
    Matrix probs;
    Vector price;
    unsigned heads = 0;
  };

  DoraModel(std::shared_ptr<const FeatureSchema> schema, ModelConfig config, std::uint64_t seed);
  DoraModel(std::shared_ptr<const FeatureSchema> schema, ModelConfig config, ModelParams params);

  const FeatureSchema& schema() const { return *schema_; }
  const std::shared_ptr<const FeatureSchema>& schema_ptr() const { return schema_; }
  const ModelConfig& config() const { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  std::size_t embedding_width() const;
  std::size_t num_pretext_classes() const;
  // Categorical columns that feed the embedding (all but a categorical
  // pretext target).
  const std::vector<std::size_t>& input_categoricals() const { return input_cats_; }

  // Pretext class of every record: town id, or the target column's index.
  std::vector<std::int32_t> pretext_labels(const Batch& batch) const;

  Matrix embed(const Batch& batch) const;
  Matrix encode(const Matrix& embedding) const;
  Matrix predict_town(const Matrix& z) const;
  Vector predict_price(const Matrix& z) const;

  // `heads` is a mask of kPretextHead / kPriceHead.
  Forward forward(const Batch& batch, unsigned heads) const;
  // Gradients of every parameter; absent upstream gradients count as zero.
  // Consumes the tapes in `fwd`.
  ModelGrads backward(Forward& fwd, const Matrix* grad_logits, const Matrix* grad_z,
                      const Vector* grad_price) const;

  // Parameter blocks for the requested components. Embedders the feature
  // subset does not use are left out.
  std::vector<nn::ParamBlock> param_blocks(const ModelGrads& grads, unsigned components);

  void reset_price_head(std::uint64_t seed);
  void reset_pretext_head(std::uint64_t seed);

 private:
  void check_shapes() const;

  std::shared_ptr<const FeatureSchema> schema_;
  ModelConfig config_;
  ModelParams params_;
  std::vector<std::size_t> input_cats_;
};

// Everything needed to reproduce predictions: model, schema, the feature
// normalizer and (after fine-tuning) the price scaler.
struct Checkpoint {
  DoraModel model;
  Normalizer features;
  std::optional<Normalizer> target;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// File layout:
//   text manifest: magic line, version, config keys, embedded schema with
//   digest, normalizer and tensor directory (name rows cols), "data <bytes>"
//   raw little-endian float64 tensor data in directory order
//   CRC-32 of all preceding bytes, 4 bytes little-endian
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws DataError on bad magic, version mismatch, truncation, checksum or
// shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(std::string_view bytes);

}  // namespace dora
