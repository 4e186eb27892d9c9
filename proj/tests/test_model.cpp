#include <gtest/gtest.h>

#include <cmath>

#include "dora/error.hpp"
#include "dora/model.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace dora;
using dora::testing::random_dataset;
using dora::testing::tiny_config;
using dora::testing::tiny_schema;

namespace {

double ref_mish(double x) { return x * std::tanh(std::log1p(std::exp(x))); }

Matrix dense(const nn::DenseLayer& l, const Matrix& x) {
  Matrix out(x.rows(), l.weight.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index o = 0; o < l.weight.rows(); ++o) {
      double s = l.bias(o);
      for (Eigen::Index k = 0; k < x.cols(); ++k) s += l.weight(o, k) * x(i, k);
      out(i, o) = l.activation == nn::Activation::kMish ? ref_mish(s) : s;
    }
  }
  return out;
}

Matrix compose(const nn::Mlp& net, Matrix x) {
  for (const auto& l : net.layers()) x = dense(l, x);
  return x;
}

}  // namespace

TEST(ModelConfig, DefaultEmbeddingWidths) {
  auto schema = std::make_shared<const FeatureSchema>(default_schema());
  ModelConfig c;
  c.d_z = 4;  // keep the encoder small; widths below do not depend on it
  EXPECT_EQ(DoraModel(schema, c, 1).embedding_width(), 208u);
  c.feature_subset = FeatureSubset::kRF;
  EXPECT_EQ(DoraModel(schema, c, 1).embedding_width(), 176u);
  c.feature_subset = FeatureSubset::kRFPoI;
  EXPECT_EQ(DoraModel(schema, c, 1).embedding_width(), 192u);
  c.feature_subset = FeatureSubset::kRFEconGeo;
  EXPECT_EQ(DoraModel(schema, c, 1).embedding_width(), 192u);
}

TEST(ModelConfig, DefaultsAndParsing) {
  const ModelConfig c;
  EXPECT_EQ(c.d_nr, 16u);
  EXPECT_EQ(c.d_cr, 10u);
  EXPECT_EQ(c.d_econ_geo, 16u);
  EXPECT_EQ(c.d_poi, 16u);
  EXPECT_EQ(c.d_z, 256u);
  EXPECT_EQ(c.encoder_multipliers, (std::vector<std::size_t>{2, 4, 8, 4, 2, 1}));
  for (auto s : {FeatureSubset::kRF, FeatureSubset::kRFPoI, FeatureSubset::kRFEconGeo, FeatureSubset::kAll}) {
    EXPECT_EQ(parse_feature_subset(to_string(s)), s);
  }
  EXPECT_THROW(parse_feature_subset("Everything"), std::invalid_argument);
  ModelConfig bad = tiny_config();
  bad.encoder_multipliers = {2, 3};
  EXPECT_THROW(DoraModel(tiny_schema(), bad, 0), std::invalid_argument);
  bad = tiny_config();
  bad.pretext_target = "roof";
  EXPECT_THROW(DoraModel(tiny_schema(), bad, 0), std::invalid_argument);
}

TEST(DoraModel, DimensionChainHoldsForEverySubset) {
  const auto data = random_dataset(tiny_schema(), 5, 1);
  const Batch b = make_batch(data);
  for (auto s : {FeatureSubset::kRF, FeatureSubset::kRFPoI, FeatureSubset::kRFEconGeo, FeatureSubset::kAll}) {
    auto c = tiny_config();
    c.feature_subset = s;
    const DoraModel m(tiny_schema(), c, 2);
    const Matrix e = m.embed(b);
    EXPECT_EQ(static_cast<std::size_t>(e.cols()), m.embedding_width());
    EXPECT_EQ(m.params().encoder.in_dim(), m.embedding_width());
    const Matrix z = m.encode(e);
    EXPECT_EQ(z.rows(), 5);
    EXPECT_EQ(z.cols(), 8);
  }
}

TEST(DoraModel, ForwardMatchesHandComposition) {
  const DoraModel m(tiny_schema(), tiny_config(4), 3);
  const auto data = random_dataset(tiny_schema(), 3, 4);
  const Batch b = make_batch(data);
  const auto& p = m.params();

  Matrix e(3, static_cast<Eigen::Index>(m.embedding_width()));
  Eigen::Index col = 0;
  auto put = [&](const Matrix& block) {
    e.middleCols(col, block.cols()) = block;
    col += block.cols();
  };
  put(compose(p.embed_nr, b.numerical_re));
  for (std::size_t j = 0; j < p.embed_cr.size(); ++j) {
    Matrix rows(3, p.embed_cr[j].cols());
    for (Eigen::Index i = 0; i < 3; ++i) rows.row(i) = p.embed_cr[j].row(b.categorical_re(i, static_cast<Eigen::Index>(j)));
    put(rows);
  }
  put(compose(p.embed_econ_geo, b.econ_geo));
  put(compose(p.embed_poi, b.poi));

  const Matrix z = compose(p.encoder, e);
  const auto f = m.forward(b, kPretextHead | kPriceHead);
  EXPECT_LT((f.embedding - e).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.z - z).cwiseAbs().maxCoeff(), 1e-12);
  const Matrix logits = compose(p.pretext_head, z);
  EXPECT_LT((f.logits - logits).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((f.price - compose(p.price_head, z).col(0)).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(f.probs.row(i).sum(), 1.0, 1e-12);
}

TEST(DoraModel, TownIsNotAnInput) {
  const DoraModel m(tiny_schema(), tiny_config(), 5);
  auto data = random_dataset(tiny_schema(), 6, 6);
  const Matrix before = m.embed(make_batch(data));
  for (auto& r : data.records) {
    r.town = (r.town + 1) % 3;
    r.city = tiny_schema()->city_of(r.town);
  }
  EXPECT_EQ(m.embed(make_batch(data)), before);
}

TEST(DoraModel, CategoricalLookupIsLocal) {
  const DoraModel m(tiny_schema(), tiny_config(), 5);
  auto data = random_dataset(tiny_schema(), 1, 7);
  data.records[0].categorical_re = {1, 1};
  const Matrix a = m.embed(make_batch(data));
  data.records[0].categorical_re = {1, 2};
  const Matrix b = m.embed(make_batch(data));
  // Layout: NR (3), material (2), parking (2), econ/geo (3), PoI (2).
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    if (c == 5 || c == 6) {
      EXPECT_NE(a(0, c), b(0, c));
    } else {
      EXPECT_EQ(a(0, c), b(0, c));
    }
  }
}

TEST(DoraModel, CategoricalPretextTargetIsDroppedFromInputs) {
  auto c = tiny_config();
  c.pretext_target = "material";
  const DoraModel m(tiny_schema(), c, 8);
  EXPECT_EQ(m.num_pretext_classes(), 4u);
  EXPECT_EQ(m.embedding_width(), 3u + 2u + 3u + 2u);
  auto data = random_dataset(tiny_schema(), 4, 9);
  const Batch b = make_batch(data);
  const auto labels = m.pretext_labels(b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(labels[i], static_cast<std::int32_t>(data.records[i].categorical_re[0]));
  const Matrix before = m.embed(b);
  for (auto& r : data.records) r.categorical_re[0] = (r.categorical_re[0] + 1) % 4;
  EXPECT_EQ(m.embed(make_batch(data)), before);
}

TEST(DoraModel, HeadEdgeCases) {
  DoraModel m(tiny_schema(), tiny_config(), 10);
  for (auto& l : m.params().pretext_head.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  for (auto& l : m.params().price_head.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  m.params().price_head.layers().back().bias(0) = 2.5;
  const Matrix z = Matrix::Random(4, 8);
  const Matrix p = m.predict_town(z);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p.data()[i], 1.0 / 3.0, 1e-15);
  const Vector price = m.predict_price(z);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(price(i), 2.5);
  EXPECT_THROW(m.encode(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(DoraModel, CategoryOutsideTableThrows) {
  const DoraModel m(tiny_schema(), tiny_config(), 11);
  auto data = random_dataset(tiny_schema(), 2, 12);
  Batch b = make_batch(data);
  b.categorical_re(1, 0) = 9;
  EXPECT_THROW(m.forward(b, 0), std::out_of_range);
}

TEST(DoraModel, PretrainGradientsMatchFiniteDifferences) {
  for (auto subset : {FeatureSubset::kAll, FeatureSubset::kRF}) {
    auto c = tiny_config();
    c.feature_subset = subset;
    DoraModel m(tiny_schema(), c, 13);
    auto data = random_dataset(tiny_schema(), 6, 14);
    for (std::size_t i = 0; i < 6; ++i) data.records[i].town = static_cast<std::int32_t>(i % 3);
    const Batch b = make_batch(data);
    EXPECT_LT(dora::testing::pretrain_gradcheck(m, b, {}), 1e-4) << to_string(subset);
  }
}

TEST(DoraModel, FinetuneGradientsMatchFiniteDifferences) {
  DoraModel m(tiny_schema(), tiny_config(), 15);
  const auto data = random_dataset(tiny_schema(), 6, 16);
  const Batch b = make_batch(data);
  Vector target(6);
  for (int i = 0; i < 6; ++i) target(i) = 0.3 * i - 1.0;
  EXPECT_LT(dora::testing::finetune_gradcheck(m, b, target), 1e-4);
}

TEST(DoraModel, ParamBlocksRespectSubsetAndComponents) {
  auto c = tiny_config();
  c.feature_subset = FeatureSubset::kRF;
  DoraModel m(tiny_schema(), c, 17);
  auto f = m.forward(make_batch(random_dataset(tiny_schema(), 3, 18)), kPriceHead);
  Vector g = Vector::Ones(3);
  const auto grads = m.backward(f, nullptr, nullptr, &g);
  for (const auto& b : m.param_blocks(grads, kFinetuneComponents)) {
    EXPECT_EQ(b.name.find("econ_geo"), std::string::npos);
    EXPECT_EQ(b.name.find("embed_poi"), std::string::npos);
    EXPECT_EQ(b.name.find("pretext_head"), std::string::npos);
  }
  for (const auto& b : m.param_blocks(grads, kPriceHead)) EXPECT_EQ(b.name.rfind("price_head", 0), 0u);
}

TEST(DoraModel, SameSeedSameParameters) {
  const DoraModel a(tiny_schema(), tiny_config(), 19);
  const DoraModel b(tiny_schema(), tiny_config(), 19);
  Checkpoint ca{a, Normalizer{{0.0}, {1.0}}, std::nullopt};
  Checkpoint cb{b, Normalizer{{0.0}, {1.0}}, std::nullopt};
  EXPECT_EQ(serialize_checkpoint(ca), serialize_checkpoint(cb));
}

namespace {

Checkpoint sample_checkpoint(bool with_target) {
  const auto data = random_dataset(tiny_schema(), 20, 20);
  auto c = tiny_config();
  c.feature_subset = FeatureSubset::kRFPoI;
  Checkpoint ck{DoraModel(tiny_schema(), c, 21), fit_normalizer(data), std::nullopt};
  if (with_target) ck.target = fit_target_scaler(data);
  return ck;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool with_target : {false, true}) {
    const Checkpoint ck = sample_checkpoint(with_target);
    const auto bytes = serialize_checkpoint(ck);
    const Checkpoint back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_EQ(back.model.config(), ck.model.config());
    EXPECT_EQ(back.model.schema(), ck.model.schema());
    EXPECT_EQ(back.features, ck.features);
    EXPECT_EQ(back.target, ck.target);
    const Batch b = make_batch(random_dataset(tiny_schema(), 7, 22));
    const auto& m0 = ck.model;
    const auto& m1 = back.model;
    EXPECT_EQ(m0.predict_price(m0.encode(m0.embed(b))), m1.predict_price(m1.encode(m1.embed(b))));
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "dora_model_test.ckpt";
  const Checkpoint ck = sample_checkpoint(true);
  save_checkpoint(ck, path);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), serialize_checkpoint(ck));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), DataError);
}

TEST(Checkpoint, RejectsDamagedFiles) {
  const auto bytes = serialize_checkpoint(sample_checkpoint(false));
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), DataError);
  std::string flipped = bytes;
  flipped[bytes.size() - 40] ^= 0x01;
  EXPECT_THROW(deserialize_checkpoint(flipped), DataError);
  EXPECT_THROW(deserialize_checkpoint("hello"), DataError);
}

TEST(Checkpoint, RejectsOtherVersion) {
  auto bytes = serialize_checkpoint(sample_checkpoint(false));
  const auto pos = bytes.find("version 1\n");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 8] = '9';
  // Re-seal so only the version check can fail.
  bytes.resize(bytes.size() - 4);
  const auto crc = [&] {
    std::uint32_t c = 0xffffffffu;
    for (unsigned char ch : bytes) {
      c ^= ch;
      for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
    }
    return c ^ 0xffffffffu;
  }();
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((crc >> (8 * i)) & 0xffu));
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}
