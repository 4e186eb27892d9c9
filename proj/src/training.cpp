#include "dora/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dora/error.hpp"

namespace dora {

namespace {

// Fisher-Yates with an explicit uniform draw per position.
void shuffle_indices(std::vector<std::size_t>& v, nn::Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

std::vector<std::int32_t> argmax_rows(const Matrix& m) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    m.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  return out;
}

void require_schema_match(const FeatureSchema& expected, const Dataset& data, const char* what) {
  if (!data.schema) throw DataError(std::string(what) + ": dataset has no schema");
  if (!(*data.schema == expected)) {
    throw DataError(std::string(what) + ": dataset schema does not match the checkpoint schema");
  }
}

}  // namespace

Dataset sample_support_set(const Dataset& train, std::size_t k, std::uint64_t seed) {
  if (train.empty()) throw DataError("sample_support_set: empty training set");
  if (!train.schema) throw DataError("sample_support_set: dataset has no schema");
  std::map<std::int32_t, std::vector<std::size_t>> by_city;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!train.records[i].price) {
      throw DataError("sample_support_set: record " + std::to_string(train.records[i].id) + " has no price");
    }
    by_city[train.records[i].city].push_back(i);
  }
  nn::Rng rng(seed);
  Dataset support{train.schema, {}, Role::kSupport};
  for (auto& [city, idx] : by_city) {
    const std::size_t take = std::min(k, idx.size());
    // Partial Fisher-Yates: the first `take` slots become a uniform sample.
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      support.records.push_back(train.records[idx[i]]);
    }
  }
  return support;
}

void PretrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("pretrain epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("pretrain batch size must be >= 2");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout fraction must lie in [0, 1)");
  }
  loss.validate();
}

void FinetuneConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("finetune epochs must be >= 1");
  if (k_shots < 1) throw std::invalid_argument("k_shots must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (contrastive_weight < 0.0) throw std::invalid_argument("contrastive weight must be >= 0");
  contrastive.validate();
}

PretrainResult pretrain(const Dataset& unlabeled, const ModelConfig& model_config,
                        const PretrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (!unlabeled.schema) throw DataError("pretrain: dataset has no schema");
  const Dataset corpus = cfg.corpus_filter.empty() ? unlabeled : filter_by_type(unlabeled, cfg.corpus_filter);
  if (corpus.size() < 2) {
    throw DataError("pretrain: need at least 2 records" +
                    (cfg.corpus_filter.empty() ? std::string{} : " of type '" + cfg.corpus_filter + "'"));
  }

  Normalizer features = fit_normalizer(corpus);
  const Dataset data = apply_normalizer(features, corpus);
  DoraModel model(data.schema, model_config, derive_seed(cfg.seed, 1));

  nn::Rng rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, rng);
  auto holdout = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(order.size())));
  holdout = std::min(holdout, order.size() - 1);
  std::vector<std::size_t> heldout(order.end() - static_cast<std::ptrdiff_t>(holdout), order.end());
  std::vector<std::size_t> train(order.begin(), order.end() - static_cast<std::ptrdiff_t>(holdout));

  nn::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  PretrainResult result{Checkpoint{model, features, std::nullopt}, {}, train.size(), heldout.size(), 0.0, 0.0};

  if (log) *log << "epoch\tloss\tce\tcl\ttrain_macro_f1\ttrain_micro_f1\n";
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(train, rng);
    PretrainEpoch stats;
    stats.epoch = epoch;
    std::vector<std::int32_t> preds;
    std::vector<std::int32_t> truth;
    preds.reserve(train.size());
    truth.reserve(train.size());
    std::size_t batches = 0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, train.size());
      const std::span<const std::size_t> idx(train.data() + start, end - start);
      const Batch batch = make_batch(data, idx);
      const auto labels = model.pretext_labels(batch);

      auto fwd = model.forward(batch, kPretextHead);
      auto loss = losses::pretrain_loss(fwd.probs, fwd.z, labels, cfg.loss);
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "pretrain: non-finite loss at epoch " << epoch << ", batch " << batches + 1
            << " (ce=" << loss.cross_entropy << ", cl=" << loss.contrastive << ")";
        throw NumericalError(msg.str());
      }
      const auto batch_preds = argmax_rows(fwd.probs);
      preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
      truth.insert(truth.end(), labels.begin(), labels.end());

      auto grads = model.backward(fwd, &loss.grad_logits, &loss.grad_z, nullptr);
      opt.step(model.param_blocks(grads, kPretrainComponents));

      stats.loss += loss.loss;
      stats.cross_entropy += loss.cross_entropy;
      stats.contrastive += loss.contrastive;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    stats.loss /= nb;
    stats.cross_entropy /= nb;
    stats.contrastive /= nb;
    stats.train_macro_f1 = eval::macro_f1(preds, truth);
    stats.train_micro_f1 = eval::micro_f1(preds, truth);
    result.history.push_back(stats);
    if (log) {
      *log << stats.epoch << '\t' << format_double(stats.loss) << '\t' << format_double(stats.cross_entropy)
           << '\t' << format_double(stats.contrastive) << '\t' << format_double(stats.train_macro_f1) << '\t'
           << format_double(stats.train_micro_f1) << '\n';
    }
  }

  result.checkpoint.model = model;
  if (!heldout.empty()) {
    std::vector<std::int32_t> preds;
    std::vector<std::int32_t> truth;
    for (std::size_t start = 0; start < heldout.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, heldout.size());
      const Batch batch = make_batch(data, std::span<const std::size_t>(heldout.data() + start, end - start));
      const auto p = argmax_rows(model.predict_town(model.encode(model.embed(batch))));
      const auto labels = model.pretext_labels(batch);
      preds.insert(preds.end(), p.begin(), p.end());
      truth.insert(truth.end(), labels.begin(), labels.end());
    }
    result.heldout_macro_f1 = eval::macro_f1(preds, truth);
    result.heldout_micro_f1 = eval::micro_f1(preds, truth);
  }
  return result;
}

Checkpoint make_scratch_checkpoint(std::shared_ptr<const FeatureSchema> schema,
                                   const ModelConfig& model_config, Normalizer features,
                                   std::uint64_t seed) {
  return Checkpoint{DoraModel(std::move(schema), model_config, seed), std::move(features), std::nullopt};
}

FinetuneResult finetune(const Checkpoint& start, const Dataset& support, const FinetuneConfig& cfg,
                        const Dataset* validation, std::ostream* log) {
  cfg.validate();
  require_schema_match(start.model.schema(), support, "finetune");
  if (support.empty()) throw DataError("finetune: empty support set");
  if (validation) require_schema_match(start.model.schema(), *validation, "finetune validation");

  FinetuneResult result{start, {}};
  Checkpoint& ckpt = result.checkpoint;
  ckpt.target = fit_target_scaler(support);
  DoraModel& model = ckpt.model;
  model.reset_price_head(derive_seed(cfg.seed, 3));

  const Dataset data = apply_normalizer(ckpt.features, support);
  const Batch batch = make_batch(data);
  Vector target(static_cast<Eigen::Index>(batch.size()));
  for (Eigen::Index i = 0; i < target.size(); ++i) target(i) = ckpt.target->transform(0, batch.prices(i));

  const unsigned components = cfg.freeze_encoder ? unsigned{kPriceHead} : unsigned{kFinetuneComponents};
  nn::AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<double> val_truth;
  if (validation) val_truth = eval::prices_of(*validation);

  if (log) *log << "epoch\tmse" << (validation ? "\tval_mape" : "") << '\n';
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto fwd = model.forward(batch, kPriceHead);
    auto mse = losses::mse_loss(fwd.price, target);
    double total = mse.loss;
    Matrix grad_z;
    const Matrix* grad_z_ptr = nullptr;
    if (cfg.contrastive_weight > 0.0 && !cfg.freeze_encoder) {
      auto cl = losses::supcon_loss(fwd.z, batch.towns, cfg.contrastive);
      total += cfg.contrastive_weight * cl.loss;
      grad_z = cfg.contrastive_weight * cl.grad;
      grad_z_ptr = &grad_z;
    }
    if (!std::isfinite(total)) {
      throw NumericalError("finetune: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.train_mse.push_back(mse.loss);
    auto grads = model.backward(fwd, nullptr, grad_z_ptr, &mse.grad);
    opt.step(model.param_blocks(grads, components));
    if (log) {
      *log << epoch << '\t' << format_double(mse.loss);
      if (validation) *log << '\t' << format_double(eval::mape(predict_prices(ckpt, *validation), val_truth));
      *log << '\n';
    }
  }
  return result;
}

std::vector<double> predict_prices(const Checkpoint& fitted, const Dataset& data) {
  if (!fitted.target) throw std::logic_error("predict_prices: checkpoint has no price scaler (not fine-tuned)");
  require_schema_match(fitted.model.schema(), data, "predict_prices");
  const Dataset norm = apply_normalizer(fitted.features, data);
  const auto& model = fitted.model;
  std::vector<double> out;
  out.reserve(norm.size());
  constexpr std::size_t kChunk = 1024;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < norm.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, norm.size());
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Vector p = model.predict_price(model.encode(model.embed(make_batch(norm, idx))));
    for (Eigen::Index i = 0; i < p.size(); ++i) out.push_back(fitted.target->inverse(0, p(i)));
  }
  return out;
}

std::vector<std::int32_t> predict_pretext(const Checkpoint& ckpt, const Dataset& data) {
  require_schema_match(ckpt.model.schema(), data, "predict_pretext");
  const Dataset norm = apply_normalizer(ckpt.features, data);
  const auto& model = ckpt.model;
  return argmax_rows(model.predict_town(model.encode(model.embed(make_batch(norm)))));
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kDora: return "DoRA";
    case Method::kDnn: return "DNN";
    case Method::kDnnCl: return "DNN+CL";
    case Method::kHa: return "HA";
    case Method::kLr: return "LR";
  }
  return "DoRA";
}

Method parse_method(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "dora") return Method::kDora;
  if (lower == "dnn") return Method::kDnn;
  if (lower == "dnn+cl" || lower == "dnn-cl") return Method::kDnnCl;
  if (lower == "ha") return Method::kHa;
  if (lower == "lr") return Method::kLr;
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (expected dora, dnn, dnn-cl, ha, lr)");
}

namespace {

void aggregate(ExperimentReport& report) {
  const double n = static_cast<double>(report.rows.size());
  auto stats = [&](auto get) {
    double mean = 0.0;
    for (const auto& r : report.rows) mean += get(r.metrics);
    mean /= n;
    double var = 0.0;
    for (const auto& r : report.rows) var += (get(r.metrics) - mean) * (get(r.metrics) - mean);
    return std::pair{mean, std::sqrt(var / n)};
  };
  auto [mape_mean, mape_std] = stats([](const eval::MetricSet& m) { return m.mape; });
  auto [mae_mean, mae_std] = stats([](const eval::MetricSet& m) { return m.mae; });
  report.mean.mape = mape_mean;
  report.stddev.mape = mape_std;
  report.mean.mae = mae_mean;
  report.stddev.mae = mae_std;
  for (double k : report.hit_tolerances) {
    auto [hm, hs] = stats([k](const eval::MetricSet& m) { return m.hit_rate.at(k); });
    report.mean.hit_rate[k] = hm;
    report.stddev.hit_rate[k] = hs;
  }
}

}  // namespace

ExperimentReport run_experiment(const ExperimentInputs& in, const ExperimentConfig& cfg) {
  if (!in.train || !in.test) throw std::invalid_argument("run_experiment: train and test datasets are required");
  if (cfg.seeds.empty()) throw std::invalid_argument("run_experiment: no seeds");
  if (cfg.k_shots < 1) throw std::invalid_argument("run_experiment: k_shots must be >= 1");
  const Dataset& test = *in.test;
  const auto truth = eval::prices_of(test);

  ExperimentReport report;
  report.model = cfg.model_label.empty() ? std::string(method_name(cfg.method)) : cfg.model_label;
  report.dataset = cfg.dataset_label;
  report.shots = cfg.k_shots;
  report.hit_tolerances = cfg.hit_tolerances;

  if (cfg.method == Method::kDora && !in.pretrained) {
    throw std::invalid_argument("run_experiment: DoRA needs a pre-trained checkpoint");
  }
  if ((cfg.method == Method::kDnn || cfg.method == Method::kDnnCl || cfg.method == Method::kLr) && !in.features) {
    throw std::invalid_argument("run_experiment: a feature normalizer is required for this baseline");
  }

  for (std::uint64_t seed : cfg.seeds) {
    const Dataset support = sample_support_set(*in.train, cfg.k_shots, seed);
    std::vector<double> pred;
    switch (cfg.method) {
      case Method::kHa: {
        std::vector<std::int32_t> cities;
        for (const auto& r : test.records) cities.push_back(r.city);
        pred = eval::historical_average(support, cities);
        break;
      }
      case Method::kLr:
        pred = eval::linear_regression(apply_normalizer(*in.features, support),
                                       apply_normalizer(*in.features, test), cfg.ridge);
        break;
      case Method::kDora:
      case Method::kDnn:
      case Method::kDnnCl: {
        FinetuneConfig ft = cfg.finetune;
        ft.seed = derive_seed(seed, 7);
        ft.k_shots = cfg.k_shots;
        ft.contrastive_weight = cfg.method == Method::kDnnCl ? cfg.dnn_cl_weight : 0.0;
        const Checkpoint start = cfg.method == Method::kDora
                                     ? *in.pretrained
                                     : make_scratch_checkpoint(in.train->schema, in.model_config, *in.features,
                                                               derive_seed(seed, 11));
        const auto fitted = finetune(start, support, ft);
        pred = predict_prices(fitted.checkpoint, test);
        break;
      }
    }
    report.rows.push_back({seed, support.size(), eval::compute_metrics(pred, truth, cfg.hit_tolerances)});
  }
  aggregate(report);
  return report;
}

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string hr_label(double k) { return "HR" + format_double(k); }

}  // namespace

std::string report_to_tsv(const std::vector<ExperimentReport>& reports) {
  std::ostringstream out;
  std::vector<double> tolerances;
  for (const auto& r : reports) {
    for (double k : r.hit_tolerances) {
      if (std::find(tolerances.begin(), tolerances.end(), k) == tolerances.end()) tolerances.push_back(k);
    }
  }
  auto hr_cells = [&](const eval::MetricSet& m, const eval::MetricSet* sd) {
    std::string s;
    for (double k : tolerances) {
      s += '\t';
      auto it = m.hit_rate.find(k);
      if (it == m.hit_rate.end()) {
        s += "NA";
        continue;
      }
      s += fixed(100.0 * it->second, 2);
      if (sd) s += "±" + fixed(100.0 * sd->hit_rate.at(k), 2);
    }
    return s;
  };

  out << "model\tdataset\tshots\tseed\tsupport\tMAPE\tMAE";
  for (double k : tolerances) out << '\t' << hr_label(k);
  out << '\n';
  for (const auto& r : reports) {
    for (const auto& row : r.rows) {
      out << r.model << '\t' << r.dataset << '\t' << r.shots << '\t' << row.seed << '\t' << row.support_size
          << '\t' << fixed(row.metrics.mape) << '\t' << fixed(row.metrics.mae) << hr_cells(row.metrics, nullptr)
          << '\n';
    }
  }
  out << '\n';
  out << "model\tdataset\tshots\tseeds\tMAPE\tMAE";
  for (double k : tolerances) out << '\t' << hr_label(k);
  out << '\n';
  for (const auto& r : reports) {
    out << r.model << '\t' << r.dataset << '\t' << r.shots << '\t' << r.rows.size() << '\t'
        << fixed(r.mean.mape, 2) << "±" << fixed(r.stddev.mape, 2) << '\t' << fixed(r.mean.mae, 2) << "±"
        << fixed(r.stddev.mae, 2) << hr_cells(r.mean, &r.stddev) << '\n';
  }
  return out.str();
}

}  // namespace dora
