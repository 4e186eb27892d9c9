#include "dora/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include <zlib.h>

#include "dora/error.hpp"

namespace dora {

std::string_view to_string(FeatureSubset subset) {
  switch (subset) {
    case FeatureSubset::kRF: return "RF";
    case FeatureSubset::kRFPoI: return "RF+PoI";
    case FeatureSubset::kRFEconGeo: return "RF+EconGeo";
    case FeatureSubset::kAll: return "All";
  }
  return "All";
}

FeatureSubset parse_feature_subset(std::string_view text) {
  for (auto s : {FeatureSubset::kRF, FeatureSubset::kRFPoI, FeatureSubset::kRFEconGeo, FeatureSubset::kAll}) {
    if (to_string(s) == text) return s;
  }
  throw std::invalid_argument("unknown feature subset '" + std::string(text) +
                              "' (expected RF, RF+PoI, RF+EconGeo or All)");
}

void ModelConfig::validate(const FeatureSchema& schema) const {
  if (d_nr == 0 || d_cr == 0 || d_econ_geo == 0 || d_poi == 0 || d_z == 0) {
    throw std::invalid_argument("model dimensions must be >= 1");
  }
  if (encoder_multipliers.empty() || encoder_multipliers.back() != 1 ||
      std::find(encoder_multipliers.begin(), encoder_multipliers.end(), 0) != encoder_multipliers.end()) {
    throw std::invalid_argument("encoder multipliers must be >= 1 and end with 1");
  }
  if (pretext_target != kTownTarget) {
    if (!schema.categorical_index(pretext_target)) {
      throw std::invalid_argument("pretext target '" + pretext_target +
                                  "' is neither 'town' nor a categorical column");
    }
    if (schema.num_categorical_re() < 2) {
      throw std::invalid_argument("a categorical pretext target needs another categorical input");
    }
  }
}

Batch make_batch(const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(data, all);
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (!data.schema) throw DataError("make_batch: dataset has no schema");
  const auto& s = *data.schema;
  const auto n = static_cast<Eigen::Index>(indices.size());
  Batch b;
  b.numerical_re.resize(n, static_cast<Eigen::Index>(s.num_numerical_re()));
  b.categorical_re.resize(n, static_cast<Eigen::Index>(s.num_categorical_re()));
  b.econ_geo.resize(n, static_cast<Eigen::Index>(s.num_econ_geo()));
  b.poi.resize(n, static_cast<Eigen::Index>(s.num_poi()));
  b.towns.reserve(indices.size());
  b.cities.reserve(indices.size());
  bool priced = true;
  for (std::size_t idx : indices) priced = priced && data.records.at(idx).price.has_value();
  if (priced) b.prices.resize(n);

  auto fill = [](Matrix& m, Eigen::Index row, const std::vector<double>& v) {
    if (static_cast<Eigen::Index>(v.size()) != m.cols()) throw DataError("record does not match schema");
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(row, c) = v[static_cast<std::size_t>(c)];
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = data.records[indices[static_cast<std::size_t>(i)]];
    fill(b.numerical_re, i, r.numerical_re);
    fill(b.econ_geo, i, r.econ_geo);
    fill(b.poi, i, r.poi);
    if (static_cast<Eigen::Index>(r.categorical_re.size()) != b.categorical_re.cols()) {
      throw DataError("record does not match schema");
    }
    for (Eigen::Index c = 0; c < b.categorical_re.cols(); ++c) {
      b.categorical_re(i, c) = r.categorical_re[static_cast<std::size_t>(c)];
    }
    b.towns.push_back(r.town);
    b.cities.push_back(r.city);
    if (priced) b.prices(i) = *r.price;
  }
  return b;
}

namespace {

nn::Mlp make_head(std::size_t d_z, std::size_t hidden_layers, std::size_t out, nn::Rng& rng) {
  std::vector<std::size_t> dims{d_z};
  for (std::size_t i = 0; i < hidden_layers; ++i) dims.push_back(d_z);
  dims.push_back(out);
  return nn::Mlp::create(dims, nn::Activation::kMish, nn::Activation::kIdentity, rng);
}

nn::Mlp make_embedder(std::size_t in, std::size_t out, nn::Rng& rng) {
  const std::size_t dims[] = {in, out};
  return nn::Mlp::create(dims, nn::Activation::kMish, nn::Activation::kMish, rng);
}

std::vector<std::size_t> encoder_dims(const ModelConfig& c, std::size_t input) {
  std::vector<std::size_t> dims{input};
  for (auto m : c.encoder_multipliers) dims.push_back(m * c.d_z);
  return dims;
}

}  // namespace

DoraModel::DoraModel(std::shared_ptr<const FeatureSchema> schema, ModelConfig config,
                     std::uint64_t seed)
    : schema_(std::move(schema)), config_(std::move(config)) {
  if (!schema_) throw std::invalid_argument("DoraModel: null schema");
  schema_->validate();
  config_.validate(*schema_);
  for (std::size_t j = 0; j < schema_->num_categorical_re(); ++j) {
    if (schema_->categorical_re[j].name != config_.pretext_target) input_cats_.push_back(j);
  }

  nn::Rng rng(seed);
  const auto& s = *schema_;
  params_.embed_nr = make_embedder(s.num_numerical_re(), config_.d_nr, rng);
  for (const auto& c : s.categorical_re) {
    params_.embed_cr.push_back(nn::glorot_uniform(c.vocab_size(), config_.d_cr, c.vocab_size(), config_.d_cr, rng));
  }
  params_.embed_econ_geo = make_embedder(s.num_econ_geo(), config_.d_econ_geo, rng);
  params_.embed_poi = make_embedder(s.num_poi(), config_.d_poi, rng);
  const auto dims = encoder_dims(config_, embedding_width());
  params_.encoder = nn::Mlp::create(dims, nn::Activation::kMish, nn::Activation::kIdentity, rng);
  params_.pretext_head = make_head(config_.d_z, config_.head_hidden_layers, num_pretext_classes(), rng);
  params_.price_head = make_head(config_.d_z, config_.head_hidden_layers, 1, rng);
  check_shapes();
}

DoraModel::DoraModel(std::shared_ptr<const FeatureSchema> schema, ModelConfig config, ModelParams params)
    : schema_(std::move(schema)), config_(std::move(config)), params_(std::move(params)) {
  if (!schema_) throw std::invalid_argument("DoraModel: null schema");
  schema_->validate();
  config_.validate(*schema_);
  for (std::size_t j = 0; j < schema_->num_categorical_re(); ++j) {
    if (schema_->categorical_re[j].name != config_.pretext_target) input_cats_.push_back(j);
  }
  check_shapes();
}

void DoraModel::check_shapes() const {
  const auto& s = *schema_;
  const auto& p = params_;
  auto fail = [](const std::string& what) { throw std::invalid_argument("DoraModel: " + what); };
  if (p.embed_nr.empty() || p.embed_nr.in_dim() != s.num_numerical_re() || p.embed_nr.out_dim() != config_.d_nr) {
    fail("numerical embedder shape");
  }
  if (p.embed_cr.size() != s.num_categorical_re()) fail("categorical table count");
  for (std::size_t j = 0; j < p.embed_cr.size(); ++j) {
    if (static_cast<std::size_t>(p.embed_cr[j].rows()) != s.categorical_re[j].vocab_size() ||
        static_cast<std::size_t>(p.embed_cr[j].cols()) != config_.d_cr) {
      fail("categorical table shape for '" + s.categorical_re[j].name + "'");
    }
  }
  if (p.embed_econ_geo.empty() || p.embed_econ_geo.in_dim() != s.num_econ_geo() ||
      p.embed_econ_geo.out_dim() != config_.d_econ_geo) {
    fail("econ/geo embedder shape");
  }
  if (p.embed_poi.empty() || p.embed_poi.in_dim() != s.num_poi() || p.embed_poi.out_dim() != config_.d_poi) {
    fail("PoI embedder shape");
  }
  const auto dims = encoder_dims(config_, embedding_width());
  if (p.encoder.depth() != dims.size() - 1) fail("encoder depth");
  for (std::size_t i = 0; i < p.encoder.depth(); ++i) {
    if (p.encoder.layers()[i].in_dim() != dims[i] || p.encoder.layers()[i].out_dim() != dims[i + 1]) {
      fail("encoder layer " + std::to_string(i) + " shape");
    }
  }
  if (p.pretext_head.empty() || p.pretext_head.in_dim() != config_.d_z ||
      p.pretext_head.out_dim() != num_pretext_classes()) {
    fail("pretext head shape");
  }
  if (p.price_head.empty() || p.price_head.in_dim() != config_.d_z || p.price_head.out_dim() != 1) {
    fail("price head shape");
  }
}

std::size_t DoraModel::embedding_width() const {
  std::size_t w = config_.d_nr + input_cats_.size() * config_.d_cr;
  if (uses_econ_geo(config_.feature_subset)) w += config_.d_econ_geo;
  if (uses_poi(config_.feature_subset)) w += config_.d_poi;
  return w;
}

std::size_t DoraModel::num_pretext_classes() const {
  if (config_.pretext_target == kTownTarget) return schema_->num_towns();
  return schema_->categorical_re[*schema_->categorical_index(config_.pretext_target)].vocab_size();
}

std::vector<std::int32_t> DoraModel::pretext_labels(const Batch& batch) const {
  if (config_.pretext_target == kTownTarget) return batch.towns;
  const auto col = static_cast<Eigen::Index>(*schema_->categorical_index(config_.pretext_target));
  std::vector<std::int32_t> labels(batch.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<std::int32_t>(batch.categorical_re(static_cast<Eigen::Index>(i), col));
  }
  return labels;
}

namespace {

void check_batch(const FeatureSchema& s, const Batch& b) {
  const auto n = static_cast<Eigen::Index>(b.size());
  if (b.numerical_re.rows() != n || b.categorical_re.rows() != n || b.econ_geo.rows() != n || b.poi.rows() != n) {
    throw std::invalid_argument("batch families have different row counts");
  }
  if (static_cast<std::size_t>(b.numerical_re.cols()) != s.num_numerical_re() ||
      static_cast<std::size_t>(b.categorical_re.cols()) != s.num_categorical_re() ||
      static_cast<std::size_t>(b.econ_geo.cols()) != s.num_econ_geo() ||
      static_cast<std::size_t>(b.poi.cols()) != s.num_poi()) {
    throw std::invalid_argument("batch does not match the model schema");
  }
}

}  // namespace

DoraModel::Forward DoraModel::forward(const Batch& batch, unsigned heads) const {
  check_batch(*schema_, batch);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto& p = params_;
  Forward f;
  f.heads = heads;
  f.categories = batch.categorical_re;
  f.embedding.resize(n, static_cast<Eigen::Index>(embedding_width()));

  Eigen::Index col = 0;
  auto place = [&](const Matrix& block) {
    f.embedding.middleCols(col, block.cols()) = block;
    col += block.cols();
  };

  auto nr = nn::mlp_forward(p.embed_nr, batch.numerical_re);
  place(nr.output);
  f.nr_tape = std::move(nr.tape);

  const auto d_cr = static_cast<Eigen::Index>(config_.d_cr);
  for (std::size_t j : input_cats_) {
    const auto& table = p.embed_cr[j];
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto idx = batch.categorical_re(i, static_cast<Eigen::Index>(j));
      if (idx >= static_cast<std::uint32_t>(table.rows())) {
        throw std::out_of_range("category index " + std::to_string(idx) + " outside table '" +
                                schema_->categorical_re[j].name + "'");
      }
      f.embedding.block(i, col, 1, d_cr) = table.row(static_cast<Eigen::Index>(idx));
    }
    col += d_cr;
  }

  if (uses_econ_geo(config_.feature_subset)) {
    auto eg = nn::mlp_forward(p.embed_econ_geo, batch.econ_geo);
    place(eg.output);
    f.econ_geo_tape = std::move(eg.tape);
  }
  if (uses_poi(config_.feature_subset)) {
    auto po = nn::mlp_forward(p.embed_poi, batch.poi);
    place(po.output);
    f.poi_tape = std::move(po.tape);
  }

  auto enc = nn::mlp_forward(p.encoder, f.embedding);
  f.z = std::move(enc.output);
  f.encoder_tape = std::move(enc.tape);

  if (heads & kPretextHead) {
    auto h = nn::mlp_forward(p.pretext_head, f.z);
    f.logits = std::move(h.output);
    f.probs = nn::softmax_rows(f.logits);
    f.pretext_tape = std::move(h.tape);
  }
  if (heads & kPriceHead) {
    auto h = nn::mlp_forward(p.price_head, f.z);
    f.price = h.output.col(0);
    f.price_tape = std::move(h.tape);
  }
  return f;
}

ModelGrads DoraModel::backward(Forward& f, const Matrix* grad_logits, const Matrix* grad_z,
                               const Vector* grad_price) const {
  const auto& p = params_;
  ModelGrads g;
  g.embed_nr = nn::MlpGrad::zeros_like(p.embed_nr);
  for (const auto& t : p.embed_cr) g.embed_cr.push_back(Matrix::Zero(t.rows(), t.cols()));
  g.embed_econ_geo = nn::MlpGrad::zeros_like(p.embed_econ_geo);
  g.embed_poi = nn::MlpGrad::zeros_like(p.embed_poi);
  g.pretext_head = nn::MlpGrad::zeros_like(p.pretext_head);
  g.price_head = nn::MlpGrad::zeros_like(p.price_head);

  Matrix dz = grad_z ? *grad_z : Matrix::Zero(f.z.rows(), f.z.cols());
  if (dz.rows() != f.z.rows() || dz.cols() != f.z.cols()) throw std::invalid_argument("grad_z shape mismatch");
  if (grad_logits) {
    if (!(f.heads & kPretextHead)) throw std::logic_error("pretext head was not run in the forward pass");
    g.pretext_head = nn::mlp_backward(p.pretext_head, f.pretext_tape, *grad_logits);
    dz += g.pretext_head.input;
  }
  if (grad_price) {
    if (!(f.heads & kPriceHead)) throw std::logic_error("price head was not run in the forward pass");
    Matrix up = *grad_price;
    g.price_head = nn::mlp_backward(p.price_head, f.price_tape, up);
    dz += g.price_head.input;
  }

  g.encoder = nn::mlp_backward(p.encoder, f.encoder_tape, dz);
  const Matrix& de = g.encoder.input;
  const auto n = de.rows();

  Eigen::Index col = 0;
  const auto d_nr = static_cast<Eigen::Index>(config_.d_nr);
  g.embed_nr = nn::mlp_backward(p.embed_nr, f.nr_tape, de.middleCols(col, d_nr));
  col += d_nr;

  const auto d_cr = static_cast<Eigen::Index>(config_.d_cr);
  for (std::size_t j : input_cats_) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto idx = static_cast<Eigen::Index>(f.categories(i, static_cast<Eigen::Index>(j)));
      g.embed_cr[j].row(idx) += de.block(i, col, 1, d_cr);
    }
    col += d_cr;
  }
  if (uses_econ_geo(config_.feature_subset)) {
    const auto w = static_cast<Eigen::Index>(config_.d_econ_geo);
    g.embed_econ_geo = nn::mlp_backward(p.embed_econ_geo, f.econ_geo_tape, de.middleCols(col, w));
    col += w;
  }
  if (uses_poi(config_.feature_subset)) {
    const auto w = static_cast<Eigen::Index>(config_.d_poi);
    g.embed_poi = nn::mlp_backward(p.embed_poi, f.poi_tape, de.middleCols(col, w));
    col += w;
  }
  return g;
}

Matrix DoraModel::embed(const Batch& batch) const { return forward(batch, 0).embedding; }

Matrix DoraModel::encode(const Matrix& embedding) const {
  if (static_cast<std::size_t>(embedding.cols()) != embedding_width()) {
    throw std::invalid_argument("encode: embedding width " + std::to_string(embedding.cols()) +
                                " does not match encoder input " + std::to_string(embedding_width()));
  }
  return nn::mlp_infer(params_.encoder, embedding);
}

Matrix DoraModel::predict_town(const Matrix& z) const {
  return nn::softmax_rows(nn::mlp_infer(params_.pretext_head, z));
}

Vector DoraModel::predict_price(const Matrix& z) const {
  return nn::mlp_infer(params_.price_head, z).col(0);
}

std::vector<nn::ParamBlock> DoraModel::param_blocks(const ModelGrads& g, unsigned components) {
  std::vector<nn::ParamBlock> blocks;
  auto& p = params_;
  if (components & kEmbedders) {
    nn::append_blocks(blocks, "embed_nr", p.embed_nr, g.embed_nr);
    for (std::size_t j : input_cats_) {
      auto& t = p.embed_cr[j];
      const auto& gt = g.embed_cr[j];
      blocks.push_back({"embed_cr." + schema_->categorical_re[j].name,
                        {t.data(), static_cast<std::size_t>(t.size())},
                        {gt.data(), static_cast<std::size_t>(gt.size())}});
    }
    if (uses_econ_geo(config_.feature_subset)) {
      nn::append_blocks(blocks, "embed_econ_geo", p.embed_econ_geo, g.embed_econ_geo);
    }
    if (uses_poi(config_.feature_subset)) nn::append_blocks(blocks, "embed_poi", p.embed_poi, g.embed_poi);
  }
  if (components & kEncoder) nn::append_blocks(blocks, "encoder", p.encoder, g.encoder);
  if (components & kPretextHead) nn::append_blocks(blocks, "pretext_head", p.pretext_head, g.pretext_head);
  if (components & kPriceHead) nn::append_blocks(blocks, "price_head", p.price_head, g.price_head);
  return blocks;
}

void DoraModel::reset_price_head(std::uint64_t seed) {
  nn::Rng rng(seed);
  params_.price_head = make_head(config_.d_z, config_.head_hidden_layers, 1, rng);
}

void DoraModel::reset_pretext_head(std::uint64_t seed) {
  nn::Rng rng(seed);
  params_.pretext_head = make_head(config_.d_z, config_.head_hidden_layers, num_pretext_classes(), rng);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "DORA-CHECKPOINT";

using TensorVisitor = std::function<void(const std::string& name, double* data, Eigen::Index rows,
                                         Eigen::Index cols)>;

void visit_mlp(const std::string& prefix, nn::Mlp& net, const TensorVisitor& fn) {
  for (std::size_t i = 0; i < net.depth(); ++i) {
    auto& l = net.layers()[i];
    const auto base = prefix + "." + std::to_string(i);
    fn(base + ".weight", l.weight.data(), l.weight.rows(), l.weight.cols());
    fn(base + ".bias", l.bias.data(), l.bias.size(), 1);
  }
}

void visit_params(ModelParams& p, const FeatureSchema& s, const TensorVisitor& fn) {
  visit_mlp("embed_nr", p.embed_nr, fn);
  for (std::size_t j = 0; j < p.embed_cr.size(); ++j) {
    fn("embed_cr." + s.categorical_re[j].name, p.embed_cr[j].data(), p.embed_cr[j].rows(), p.embed_cr[j].cols());
  }
  visit_mlp("embed_econ_geo", p.embed_econ_geo, fn);
  visit_mlp("embed_poi", p.embed_poi, fn);
  visit_mlp("encoder", p.encoder, fn);
  visit_mlp("pretext_head", p.pretext_head, fn);
  visit_mlp("price_head", p.price_head, fn);
}

void visit_normalizer(const std::string& prefix, Normalizer& n, const TensorVisitor& fn) {
  fn(prefix + ".mean", n.mean.data(), static_cast<Eigen::Index>(n.mean.size()), 1);
  fn(prefix + ".std", n.stddev.data(), static_cast<Eigen::Index>(n.stddev.size()), 1);
}

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("checkpoint: bad integer '" + s + "'");
  return v;
}

struct TensorEntry {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;  // visitors take mutable pointers
  const auto& model = copy.model;
  const auto& c = model.config();

  std::ostringstream head;
  head << kMagic << '\n';
  head << "version " << kCheckpointVersion << '\n';
  head << "config.d_nr " << c.d_nr << '\n';
  head << "config.d_cr " << c.d_cr << '\n';
  head << "config.d_econ_geo " << c.d_econ_geo << '\n';
  head << "config.d_poi " << c.d_poi << '\n';
  head << "config.d_z " << c.d_z << '\n';
  head << "config.encoder_multipliers " << join_sizes(c.encoder_multipliers) << '\n';
  head << "config.head_hidden_layers " << c.head_hidden_layers << '\n';
  head << "config.feature_subset " << to_string(c.feature_subset) << '\n';
  head << "config.pretext_target " << c.pretext_target << '\n';
  head << "schema.digest " << schema_digest(model.schema()) << '\n';
  head << "schema.begin\n" << schema_to_text(model.schema()) << "schema.end\n";
  head << "target_scaler " << (copy.target ? 1 : 0) << '\n';

  std::string blob;
  auto write = [&](const std::string& name, double* data, Eigen::Index rows, Eigen::Index cols) {
    head << "tensor " << name << ' ' << rows << ' ' << cols << '\n';
    for (Eigen::Index i = 0; i < rows * cols; ++i) put_f64(blob, data[i]);
  };
  visit_params(copy.model.params(), copy.model.schema(), write);
  visit_normalizer("norm.features", copy.features, write);
  if (copy.target) visit_normalizer("norm.target", *copy.target, write);
  head << "data " << blob.size() << '\n';

  std::string out = head.str() + blob;
  const auto crc = crc32_of(out);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((crc >> (8 * i)) & 0xffu));
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 5 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw DataError("not a checkpoint file (bad magic)");
  }
  const auto body = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[body.size() + static_cast<std::size_t>(i)]))
              << (8 * i);
  }
  if (crc32_of(body) != stored) throw DataError("checkpoint checksum mismatch (truncated or corrupt file)");

  std::map<std::string, std::string> kv;
  std::string schema_text;
  std::vector<TensorEntry> tensors;
  std::size_t pos = 0;
  std::size_t data_bytes = 0;
  bool in_schema = false;
  bool have_data = false;
  auto next_line = [&]() -> std::string {
    auto nl = body.find('\n', pos);
    if (nl == std::string_view::npos) throw DataError("checkpoint: truncated manifest");
    std::string line(body.substr(pos, nl - pos));
    pos = nl + 1;
    return line;
  };
  next_line();  // magic
  while (!have_data) {
    const std::string line = next_line();
    if (in_schema) {
      if (line == "schema.end") {
        in_schema = false;
      } else {
        schema_text += line + '\n';
      }
      continue;
    }
    if (line == "schema.begin") {
      in_schema = true;
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "tensor") {
      TensorEntry e;
      ls >> e.name >> e.rows >> e.cols;
      if (!ls || e.rows < 0 || e.cols < 0) throw DataError("checkpoint: bad tensor entry '" + line + "'");
      tensors.push_back(e);
    } else if (key == "data") {
      std::string n;
      ls >> n;
      data_bytes = parse_size(n);
      have_data = true;
    } else {
      std::string value;
      std::getline(ls >> std::ws, value);
      kv[key] = value;
    }
  }

  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("checkpoint: missing key '" + key + "'");
    return it->second;
  };
  const auto version = parse_size(get("version"));
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  if (body.size() - pos != data_bytes) throw DataError("checkpoint: data section size mismatch");

  auto schema = std::make_shared<const FeatureSchema>(schema_from_text(schema_text));
  if (schema_digest(*schema) != get("schema.digest")) throw DataError("checkpoint: schema digest mismatch");

  ModelConfig c;
  c.d_nr = parse_size(get("config.d_nr"));
  c.d_cr = parse_size(get("config.d_cr"));
  c.d_econ_geo = parse_size(get("config.d_econ_geo"));
  c.d_poi = parse_size(get("config.d_poi"));
  c.d_z = parse_size(get("config.d_z"));
  c.encoder_multipliers.clear();
  for (const auto& m : split_fields(get("config.encoder_multipliers"))) c.encoder_multipliers.push_back(parse_size(m));
  c.head_hidden_layers = parse_size(get("config.head_hidden_layers"));
  try {
    c.feature_subset = parse_feature_subset(get("config.feature_subset"));
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  c.pretext_target = get("config.pretext_target");
  const bool has_target = get("target_scaler") == "1";

  Checkpoint ckpt{DoraModel(schema, c, 0), {}, std::nullopt};
  const std::size_t numeric = schema->num_numeric();
  ckpt.features.mean.assign(numeric, 0.0);
  ckpt.features.stddev.assign(numeric, 0.0);
  if (has_target) ckpt.target = Normalizer{{0.0}, {0.0}};

  const auto* data = reinterpret_cast<const unsigned char*>(body.data() + pos);
  std::size_t index = 0;
  std::size_t offset = 0;
  auto read = [&](const std::string& name, double* dst, Eigen::Index rows, Eigen::Index cols) {
    if (index >= tensors.size()) throw DataError("checkpoint: missing tensor '" + name + "'");
    const auto& e = tensors[index++];
    if (e.name != name || e.rows != rows || e.cols != cols) {
      throw DataError("checkpoint: tensor '" + e.name + "' (" + std::to_string(e.rows) + "x" +
                      std::to_string(e.cols) + ") does not match expected '" + name + "' (" +
                      std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    const auto count = static_cast<std::size_t>(rows * cols);
    if (offset + 8 * count > data_bytes) throw DataError("checkpoint: data section too short");
    for (std::size_t i = 0; i < count; ++i) dst[i] = get_f64(data + offset + 8 * i);
    offset += 8 * count;
  };
  visit_params(ckpt.model.params(), *schema, read);
  visit_normalizer("norm.features", ckpt.features, read);
  if (ckpt.target) visit_normalizer("norm.target", *ckpt.target, read);
  if (index != tensors.size() || offset != data_bytes) throw DataError("checkpoint: unexpected extra tensors");
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

}  // namespace dora
