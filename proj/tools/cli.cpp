#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "dora/error.hpp"
#include "dora/poi.hpp"
#include "dora/synthetic.hpp"
#include "dora/training.hpp"

namespace dora::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

fs::path default_out_dir() {
  const char* env = std::getenv("DORA_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path("dora_out");
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f << content;
    f.flush();
    if (!f) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  for (auto& s : split_fields(text, ',')) {
    if (!s.empty()) out.push_back(s);
  }
  return out;
}

// Options shared by the training commands. Multi-valued fields are only
// lists in `ablate`; elsewhere the first value is used.
struct Options {
  std::string schema, data, test, unlabeled, checkpoint, out;
  std::vector<std::size_t> shots{5};
  std::size_t seeds = 5;
  std::uint64_t seed = 0;
  std::vector<double> alpha{0.7};
  double tau = 0.1;
  std::vector<std::size_t> dz{256};
  std::size_t d_nr = 16, d_cr = 10, d_econ_geo = 16, d_poi = 16;
  std::vector<std::size_t> encoder_multipliers{2, 4, 8, 4, 2, 1};
  std::size_t epochs_pretrain = 150, epochs_finetune = 200;
  double lr = 0.005;
  std::optional<double> lr_finetune;
  double weight_decay = 0.01, weight_decay_finetune = 0.01;
  std::size_t batch_size = 512;
  double holdout = 0.05;
  std::string feature_subset = "All";
  std::vector<std::string> pretext_target{std::string(kTownTarget)};
  bool freeze_encoder = false;
  std::vector<std::string> corpus_filter;
  std::vector<std::string> baseline{"dora"};
  bool no_pretrain = false;
  std::vector<double> hit_tolerances{10.0};
  double ridge = eval::kDefaultRidge;
  double dnn_cl_weight = 0.3;
  std::string dataset_label;
  bool strict = false;
};

void add_data_options(CLI::App& app, Options& o) {
  app.add_option("--schema", o.schema, "Schema file");
  app.add_option("--data", o.data, "Labeled training pool CSV (unlabeled corpus for pretrain)");
  app.add_option("--test", o.test, "Labeled test CSV");
  app.add_option("--unlabeled", o.unlabeled, "Unlabeled pre-training CSV");
  app.add_option("--out", o.out, "Output directory (default $DORA_OUT_DIR or ./dora_out)");
  app.add_flag("--strict", o.strict, "Reject categorical values outside the vocabulary");
}

void add_model_options(CLI::App& app, Options& o, bool lists) {
  app.add_option("--seed", o.seed, "Pre-training seed");
  auto* alpha = app.add_option("--alpha", o.alpha, "Cross-entropy weight alpha");
  auto* dz = app.add_option("--dz", o.dz, "Encoder output width");
  auto* target = app.add_option("--pretext-target", o.pretext_target, "town or a categorical column");
  auto* filter = app.add_option("--corpus-filter", o.corpus_filter, "Pre-train on one property type");
  for (auto* opt : {alpha, dz, target, filter}) {
    if (lists) opt->delimiter(',');
    else opt->expected(1);
  }
  app.add_option("--tau", o.tau, "Contrastive temperature");
  app.add_option("--d-nr", o.d_nr);
  app.add_option("--d-cr", o.d_cr);
  app.add_option("--d-econ-geo", o.d_econ_geo);
  app.add_option("--d-poi", o.d_poi);
  app.add_option("--encoder-multipliers", o.encoder_multipliers)->delimiter(',');
  app.add_option("--epochs-pretrain", o.epochs_pretrain);
  app.add_option("--lr", o.lr, "Learning rate (both stages unless --lr-finetune)");
  app.add_option("--weight-decay", o.weight_decay, "Pre-training weight decay");
  app.add_option("--batch-size", o.batch_size);
  app.add_option("--holdout", o.holdout, "Held-out fraction for pretext F1");
  app.add_option("--feature-subset", o.feature_subset, "RF, RF+PoI, RF+EconGeo or All");
}

void add_eval_options(CLI::App& app, Options& o) {
  app.add_option("--shots", o.shots, "Shots per city")->delimiter(',');
  app.add_option("--seeds", o.seeds, "Number of seeds (0..n-1)");
  app.add_option("--epochs-finetune", o.epochs_finetune);
  app.add_option("--lr-finetune", o.lr_finetune);
  app.add_option("--weight-decay-finetune", o.weight_decay_finetune);
  app.add_flag("--freeze-encoder", o.freeze_encoder, "Fine-tune the price head only");
  app.add_option("--hit-tolerances", o.hit_tolerances, "HR tolerances in percent")->delimiter(',');
  app.add_option("--ridge", o.ridge, "LR baseline ridge penalty");
  app.add_option("--dnn-cl-weight", o.dnn_cl_weight);
  app.add_option("--dataset-label", o.dataset_label);
}

ModelConfig model_config(const Options& o) {
  ModelConfig m;
  m.d_nr = o.d_nr;
  m.d_cr = o.d_cr;
  m.d_econ_geo = o.d_econ_geo;
  m.d_poi = o.d_poi;
  m.d_z = o.dz.front();
  m.encoder_multipliers = o.encoder_multipliers;
  m.feature_subset = parse_feature_subset(o.feature_subset);
  m.pretext_target = o.pretext_target.front();
  return m;
}

PretrainConfig pretrain_config(const Options& o) {
  PretrainConfig p;
  p.epochs = o.epochs_pretrain;
  p.batch_size = o.batch_size;
  p.lr = o.lr;
  p.weight_decay = o.weight_decay;
  p.loss.alpha = o.alpha.front();
  p.loss.tau = o.tau;
  p.seed = o.seed;
  p.corpus_filter = o.corpus_filter.empty() ? std::string{} : o.corpus_filter.front();
  p.holdout_fraction = o.holdout;
  return p;
}

FinetuneConfig finetune_config(const Options& o) {
  FinetuneConfig f;
  f.epochs = o.epochs_finetune;
  f.lr = o.lr_finetune.value_or(o.lr);
  f.weight_decay = o.weight_decay_finetune;
  f.freeze_encoder = o.freeze_encoder;
  f.contrastive.tau = o.tau;
  return f;
}

std::vector<std::uint64_t> seed_list(const Options& o) {
  if (o.seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
  std::vector<std::uint64_t> s(o.seeds);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = i;
  return s;
}

json model_json(const ModelConfig& m) {
  return {{"d_nr", m.d_nr},
          {"d_cr", m.d_cr},
          {"d_econ_geo", m.d_econ_geo},
          {"d_poi", m.d_poi},
          {"d_z", m.d_z},
          {"encoder_multipliers", m.encoder_multipliers},
          {"head_hidden_layers", m.head_hidden_layers},
          {"feature_subset", std::string(to_string(m.feature_subset))},
          {"pretext_target", m.pretext_target}};
}

json pretrain_json(const PretrainConfig& p) {
  return {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"lr", p.lr},
          {"weight_decay", p.weight_decay},
          {"alpha", p.loss.alpha},
          {"tau", p.loss.tau},
          {"seed", p.seed},
          {"corpus_filter", p.corpus_filter},
          {"holdout_fraction", p.holdout_fraction}};
}

json finetune_json(const FinetuneConfig& f) {
  return {{"epochs", f.epochs},
          {"lr", f.lr},
          {"weight_decay", f.weight_decay},
          {"freeze_encoder", f.freeze_encoder},
          {"tau", f.contrastive.tau}};
}

json metrics_json(const eval::MetricSet& m) {
  json hr = json::object();
  for (const auto& [k, v] : m.hit_rate) hr[format_double(k)] = v;
  return {{"mape", m.mape}, {"mae", m.mae}, {"hit_rate", hr}};
}

json reports_json(const std::vector<ExperimentReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    json rows = json::array();
    for (const auto& row : r.rows) {
      rows.push_back({{"seed", row.seed}, {"support", row.support_size}, {"metrics", metrics_json(row.metrics)}});
    }
    arr.push_back({{"model", r.model},
                   {"dataset", r.dataset},
                   {"shots", r.shots},
                   {"rows", rows},
                   {"mean", metrics_json(r.mean)},
                   {"std", metrics_json(r.stddev)}});
  }
  return arr;
}

class Run {
 public:
  Run(std::string command, const std::vector<std::string>& argv, fs::path out_dir)
      : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
    manifest_["command"] = std::move(command);
    manifest_["argv"] = argv;
    manifest_["tool_version"] = kToolVersion;
    manifest_["config"] = json::object();
    manifest_["inputs"] = json::object();
    manifest_["outputs"] = json::object();
    fs::create_directories(out_dir_);
  }

  json& config() { return manifest_["config"]; }
  void input(const std::string& name, const std::string& path) {
    if (!path.empty()) manifest_["inputs"][name] = path;
  }
  fs::path output(const std::string& name, const std::string& file) {
    const fs::path p = out_dir_ / file;
    manifest_["outputs"][name] = p.string();
    return p;
  }
  void seeds(const std::vector<std::uint64_t>& s) { manifest_["seeds"] = s; }

  fs::path finish() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    manifest_["wall_clock_seconds"] = dt.count();
    const fs::path p = out_dir_ / "manifest.json";
    write_atomic(p, manifest_.dump(2) + "\n");
    return p;
  }

 private:
  fs::path out_dir_;
  std::chrono::steady_clock::time_point start_;
  json manifest_;
};

fs::path out_dir(const Options& o) { return o.out.empty() ? default_out_dir() : fs::path(o.out); }

std::shared_ptr<const FeatureSchema> load_schema(const std::string& path) {
  if (path.empty()) throw std::invalid_argument("--schema is required");
  return std::make_shared<const FeatureSchema>(read_schema_file(path));
}

Dataset load(const std::string& path, const char* flag, std::shared_ptr<const FeatureSchema> schema, Role role,
             const Options& o, std::ostream& err) {
  if (path.empty()) throw std::invalid_argument(std::string(flag) + " is required");
  LoadStats stats;
  Dataset d = load_csv(path, std::move(schema), role, LoadOptions{o.strict}, &stats);
  if (stats.unknown_categories > 0) {
    err << "warning: " << path << ": " << stats.unknown_categories
        << " categorical values outside the vocabulary mapped to unknown\n";
  }
  return d;
}

std::string dataset_label(const Options& o) {
  if (!o.dataset_label.empty()) return o.dataset_label;
  return o.test.empty() ? std::string("data") : fs::path(o.test).stem().string();
}

// ---------------------------------------------------------------------------

int cmd_synth_gen(const synth::SynthConfig& cfg, const Options& o, const std::vector<std::string>& argv,
                  std::ostream& out) {
  Run run("synth-gen", argv, out_dir(o));
  const auto corpus = synth::generate(cfg);
  run.config() = {{"n_cities", cfg.n_cities},
                  {"towns_per_city", cfg.towns_per_city},
                  {"n_unlabeled", cfg.n_unlabeled},
                  {"n_train", cfg.n_train},
                  {"n_test", cfg.n_test},
                  {"town_separation", cfg.town_separation},
                  {"feature_noise_std", cfg.feature_noise_std},
                  {"price_noise_std", cfg.price_noise_std},
                  {"town_size_skew", cfg.town_size_skew},
                  {"econ_geo_spread", cfg.econ_geo_spread},
                  {"seed", cfg.seed}};
  run.seeds({cfg.seed});
  write_schema_file(*corpus.schema, run.output("schema", "schema.txt"));
  save_csv(run.output("unlabeled", "unlabeled.csv"), corpus.unlabeled);
  save_csv(run.output("train", "train.csv"), corpus.train);
  save_csv(run.output("test", "test.csv"), corpus.test);
  std::ostringstream fac;
  fac << "x,y,class\n";
  for (const auto& p : corpus.facilities) {
    fac << format_double(p.x) << ',' << format_double(p.y) << ','
        << (p.klass == poi::PoiClass::kYimby ? "YIMBY" : "NIMBY") << '\n';
  }
  write_atomic(run.output("facilities", "facilities.csv"), fac.str());
  run.finish();
  out << "wrote " << corpus.unlabeled.size() << " unlabeled, " << corpus.train.size() << " train, "
      << corpus.test.size() << " test records to " << out_dir(o).string() << '\n';
  if (corpus.clamped_prices > 0) out << "prices clamped at the floor: " << corpus.clamped_prices << '\n';
  return kOk;
}

std::vector<std::vector<std::string>> read_rows(const std::string& path, const std::vector<std::string>& header) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty file");
  if (split_fields(line) != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw DataError(path + ": header must be " + want);
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(row, "expected " + std::to_string(header.size()) + " fields, got " +
                                std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double parse_number(const std::string& s, std::size_t row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(row, "not a number: '" + s + "'");
  }
}

int cmd_poi_convert(const std::string& facilities_path, const std::string& properties_path,
                    const std::vector<double>& radii, const Options& o, const std::vector<std::string>& argv,
                    std::ostream& out) {
  if (facilities_path.empty() || properties_path.empty()) {
    throw std::invalid_argument("--facilities and --properties are required");
  }
  const poi::RadiusProfile profile = radii.empty() ? poi::RadiusProfile{} : poi::RadiusProfile{radii};
  Run run("poi-convert", argv, out_dir(o));
  run.config() = {{"radii", profile.radii()}};
  run.input("facilities", facilities_path);
  run.input("properties", properties_path);

  std::vector<poi::PoiPoint> points;
  std::size_t row = 0;
  for (const auto& f : read_rows(facilities_path, {"x", "y", "class"})) {
    ++row;
    std::string klass = f[2];
    std::transform(klass.begin(), klass.end(), klass.begin(), [](unsigned char c) { return std::toupper(c); });
    if (klass != "YIMBY" && klass != "NIMBY") throw ParseError(row, "class must be YIMBY or NIMBY");
    points.push_back({parse_number(f[0], row), parse_number(f[1], row),
                      klass == "YIMBY" ? poi::PoiClass::kYimby : poi::PoiClass::kNimby});
  }
  const auto index = poi::build_index(points, profile);

  std::ostringstream csv;
  csv << "id";
  for (const auto& n : profile.feature_names()) csv << ',' << n;
  csv << '\n';
  row = 0;
  std::size_t n = 0;
  for (const auto& p : read_rows(properties_path, {"id", "x", "y"})) {
    ++row;
    const auto counts = poi::poi_convert(index, parse_number(p[1], row), parse_number(p[2], row), profile);
    csv << p[0];
    for (double c : counts) csv << ',' << format_double(c);
    csv << '\n';
    ++n;
  }
  write_atomic(run.output("features", "poi_features.csv"), csv.str());
  run.finish();
  out << "converted " << n << " properties against " << points.size() << " facilities\n";
  return kOk;
}

int cmd_pretrain(const Options& o, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  const auto schema = load_schema(o.schema);
  const std::string& corpus_path = o.unlabeled.empty() ? o.data : o.unlabeled;
  const Dataset corpus = load(corpus_path, "--unlabeled", schema, Role::kUnlabeled, o, err);
  const ModelConfig mc = model_config(o);
  const PretrainConfig pc = pretrain_config(o);

  Run run("pretrain", argv, out_dir(o));
  run.config() = {{"model", model_json(mc)}, {"pretrain", pretrain_json(pc)}};
  run.seeds({pc.seed});
  run.input("schema", o.schema);
  run.input("unlabeled", corpus_path);

  std::ostringstream log;
  const auto result = pretrain(corpus, mc, pc, &log);
  const fs::path ckpt = o.checkpoint.empty() ? run.output("checkpoint", "model.ckpt") : fs::path(o.checkpoint);
  if (!o.checkpoint.empty()) run.config()["checkpoint"] = o.checkpoint;
  save_checkpoint(result.checkpoint, ckpt);
  write_atomic(run.output("log", "pretrain_log.tsv"), log.str());
  run.config()["result"] = {{"train_size", result.train_size},
                            {"heldout_size", result.heldout_size},
                            {"heldout_macro_f1", result.heldout_macro_f1},
                            {"heldout_micro_f1", result.heldout_micro_f1}};
  run.finish();
  out << "pretrained on " << result.train_size << " records (" << result.heldout_size << " held out)\n"
      << "heldout macro-F1\t" << format_double(result.heldout_macro_f1) << '\n'
      << "heldout micro-F1\t" << format_double(result.heldout_micro_f1) << '\n'
      << "checkpoint\t" << ckpt.string() << '\n';
  return kOk;
}

void write_reports(Run& run, const std::vector<ExperimentReport>& reports, std::ostream& out) {
  const std::string tsv = report_to_tsv(reports);
  write_atomic(run.output("report_tsv", "report.tsv"), tsv);
  write_atomic(run.output("report_json", "report.json"), reports_json(reports).dump(2) + "\n");
  run.finish();
  out << tsv;
}

int cmd_evaluate(const Options& o, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  std::optional<Checkpoint> ckpt;
  if (!o.checkpoint.empty()) ckpt = load_checkpoint(o.checkpoint);
  const auto schema = !o.schema.empty() ? load_schema(o.schema)
                      : ckpt          ? ckpt->model.schema_ptr()
                                      : load_schema(o.schema);
  const Dataset train = load(o.data, "--data", schema, Role::kTrain, o, err);
  const Dataset test = load(o.test, "--test", schema, Role::kTest, o, err);

  std::vector<Method> methods;
  for (const auto& b : o.baseline) {
    for (const auto& name : split_list(b)) {
      Method m = parse_method(name);
      if (o.no_pretrain && m == Method::kDora) m = Method::kDnn;
      if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    }
  }
  if (methods.empty()) throw std::invalid_argument("--baseline needs at least one method");
  for (Method m : methods) {
    if (m == Method::kDora && !ckpt) throw std::invalid_argument("DoRA needs --checkpoint (or use --no-pretrain)");
  }

  ExperimentInputs in;
  in.train = &train;
  in.test = &test;
  in.pretrained = ckpt ? &*ckpt : nullptr;
  in.model_config = ckpt ? ckpt->model.config() : model_config(o);
  in.features = ckpt ? ckpt->features : fit_normalizer(train);

  ExperimentConfig cfg;
  cfg.seeds = seed_list(o);
  cfg.finetune = finetune_config(o);
  cfg.hit_tolerances = o.hit_tolerances;
  cfg.ridge = o.ridge;
  cfg.dnn_cl_weight = o.dnn_cl_weight;
  cfg.dataset_label = dataset_label(o);

  Run run("evaluate", argv, out_dir(o));
  json names = json::array();
  for (Method m : methods) names.push_back(std::string(method_name(m)));
  run.config() = {{"methods", names},
                  {"shots", o.shots},
                  {"finetune", finetune_json(cfg.finetune)},
                  {"scratch_model", model_json(in.model_config)},
                  {"hit_tolerances", cfg.hit_tolerances},
                  {"ridge", cfg.ridge},
                  {"dnn_cl_weight", cfg.dnn_cl_weight},
                  {"dataset_label", cfg.dataset_label}};
  run.seeds(cfg.seeds);
  run.input("schema", o.schema);
  run.input("checkpoint", o.checkpoint);
  run.input("data", o.data);
  run.input("test", o.test);

  std::vector<ExperimentReport> reports;
  for (std::size_t k : o.shots) {
    for (Method m : methods) {
      cfg.k_shots = k;
      cfg.method = m;
      reports.push_back(run_experiment(in, cfg));
    }
  }
  write_reports(run, reports, out);
  return kOk;
}

struct Cell {
  std::string label;
  ModelConfig model;
  PretrainConfig pretrain;
  bool freeze = false;
};

std::vector<Cell> ablation_grid(const Options& o, const FeatureSchema& schema, const std::vector<std::string>& axes) {
  const Cell base{"base", model_config(o), pretrain_config(o), false};
  Cell fixed = base;
  fixed.model.pretext_target = std::string(kTownTarget);
  fixed.model.feature_subset = FeatureSubset::kAll;
  fixed.pretrain.corpus_filter.clear();

  std::vector<Cell> cells;
  auto add = [&](const std::string& label, auto&& edit) {
    Cell c = fixed;
    c.label = label;
    edit(c);
    cells.push_back(std::move(c));
  };
  for (const auto& axis : axes) {
    if (axis == "pretext-target") {
      std::vector<std::string> targets{std::string(kTownTarget)};
      for (const auto& t : o.pretext_target) {
        if (t != kTownTarget) targets.push_back(t);
      }
      if (targets.size() == 1) targets.push_back(schema.categorical_re.front().name);
      for (const auto& t : targets) add("pretext=" + t, [&](Cell& c) { c.model.pretext_target = t; });
    } else if (axis == "feature-subset") {
      for (auto s : {FeatureSubset::kRF, FeatureSubset::kRFPoI, FeatureSubset::kRFEconGeo, FeatureSubset::kAll}) {
        add("features=" + std::string(to_string(s)), [&](Cell& c) { c.model.feature_subset = s; });
      }
    } else if (axis == "freeze-encoder") {
      add("freeze=off", [](Cell& c) { c.freeze = false; });
      add("freeze=on", [](Cell& c) { c.freeze = true; });
    } else if (axis == "alpha") {
      for (double a : o.alpha) add("alpha=" + format_double(a), [&](Cell& c) { c.pretrain.loss.alpha = a; });
    } else if (axis == "dz") {
      for (std::size_t d : o.dz) add("dz=" + std::to_string(d), [&](Cell& c) { c.model.d_z = d; });
    } else if (axis == "corpus-filter") {
      std::vector<std::string> filters{""};
      if (o.corpus_filter.empty()) {
        filters.insert(filters.end(), schema.property_types.begin(), schema.property_types.end());
      } else {
        filters.insert(filters.end(), o.corpus_filter.begin(), o.corpus_filter.end());
      }
      for (const auto& f : filters) {
        add("corpus=" + (f.empty() ? std::string("all") : f), [&](Cell& c) { c.pretrain.corpus_filter = f; });
      }
    } else {
      throw std::invalid_argument("unknown ablation axis '" + axis +
                                  "' (pretext-target, feature-subset, freeze-encoder, alpha, dz, corpus-filter)");
    }
  }
  return cells;
}

int cmd_ablate(const Options& o, std::vector<std::string> axes, const std::vector<std::string>& argv,
               std::ostream& out, std::ostream& err) {
  const auto schema = load_schema(o.schema);
  const Dataset corpus = load(o.unlabeled, "--unlabeled", schema, Role::kUnlabeled, o, err);
  const Dataset train = load(o.data, "--data", schema, Role::kTrain, o, err);
  const Dataset test = load(o.test, "--test", schema, Role::kTest, o, err);
  if (axes.empty()) throw std::invalid_argument("ablate needs at least one axis");
  const auto cells = ablation_grid(o, *schema, axes);

  ExperimentConfig cfg;
  cfg.method = Method::kDora;
  cfg.k_shots = o.shots.front();
  cfg.seeds = seed_list(o);
  cfg.hit_tolerances = o.hit_tolerances;
  cfg.dataset_label = dataset_label(o);

  Run run("ablate", argv, out_dir(o));
  json grid = json::array();
  for (const auto& c : cells) {
    FinetuneConfig ft = finetune_config(o);
    ft.freeze_encoder = c.freeze;
    grid.push_back({{"label", c.label},
                    {"model", model_json(c.model)},
                    {"pretrain", pretrain_json(c.pretrain)},
                    {"finetune", finetune_json(ft)}});
  }
  run.config() = {{"axes", axes}, {"shots", cfg.k_shots}, {"cells", grid}, {"dataset_label", cfg.dataset_label}};
  run.seeds(cfg.seeds);
  run.input("schema", o.schema);
  run.input("unlabeled", o.unlabeled);
  run.input("data", o.data);
  run.input("test", o.test);

  std::map<std::string, Checkpoint> cache;
  std::vector<ExperimentReport> reports;
  for (const auto& c : cells) {
    const std::string key = model_json(c.model).dump() + pretrain_json(c.pretrain).dump();
    auto it = cache.find(key);
    if (it == cache.end()) {
      err << "pretraining for " << c.label << '\n';
      it = cache.emplace(key, pretrain(corpus, c.model, c.pretrain).checkpoint).first;
    }
    ExperimentInputs in;
    in.train = &train;
    in.test = &test;
    in.pretrained = &it->second;
    in.model_config = c.model;
    in.features = it->second.features;
    cfg.finetune = finetune_config(o);
    cfg.finetune.freeze_encoder = c.freeze;
    cfg.model_label = "DoRA[" + c.label + "]";
    reports.push_back(run_experiment(in, cfg));
  }
  write_reports(run, reports, out);
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot real-estate appraisal with self-supervised tabular pre-training", "dora"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "INI/TOML file; keys are flag names, in a [<command>] section");
  app.fallthrough();

  Options o;
  synth::SynthConfig synth_cfg;
  std::string facilities, properties;
  std::vector<double> radii;
  std::vector<std::string> axes;

  auto* synth = app.add_subcommand("synth-gen", "Write a synthetic corpus (schema, CSVs, facilities)");
  synth->add_option("--out", o.out, "Output directory");
  synth->add_option("--seed", synth_cfg.seed);
  synth->add_option("--cities", synth_cfg.n_cities);
  synth->add_option("--towns-per-city", synth_cfg.towns_per_city);
  synth->add_option("--n-unlabeled", synth_cfg.n_unlabeled);
  synth->add_option("--n-train", synth_cfg.n_train);
  synth->add_option("--n-test", synth_cfg.n_test);
  synth->add_option("--separation", synth_cfg.town_separation);
  synth->add_option("--feature-noise", synth_cfg.feature_noise_std);
  synth->add_option("--price-noise", synth_cfg.price_noise_std);
  synth->add_option("--town-skew", synth_cfg.town_size_skew, "Log-normal spread of town sizes");
  synth->add_option("--econ-geo-spread", synth_cfg.econ_geo_spread, "Within-town spread of econ/geo features");

  auto* poi_cmd = app.add_subcommand("poi-convert", "Count YIMBY/NIMBY facilities within each radius");
  poi_cmd->add_option("--facilities", facilities, "CSV with x,y,class");
  poi_cmd->add_option("--properties", properties, "CSV with id,x,y");
  poi_cmd->add_option("--radii", radii, "Radii in meters")->delimiter(',');
  poi_cmd->add_option("--out", o.out, "Output directory");

  auto* pre = app.add_subcommand("pretrain", "Pre-train on the pretext task");
  add_data_options(*pre, o);
  add_model_options(*pre, o, false);
  pre->add_option("--checkpoint", o.checkpoint, "Checkpoint output path (default <out>/model.ckpt)");

  auto* ev = app.add_subcommand("evaluate", "Few-shot fine-tuning and evaluation");
  ev->alias("finetune-eval");
  add_data_options(*ev, o);
  add_model_options(*ev, o, false);
  add_eval_options(*ev, o);
  ev->add_option("--checkpoint", o.checkpoint, "Pre-trained checkpoint");
  ev->add_option("--baseline", o.baseline, "dora, dnn, dnn-cl, ha, lr (comma list)")->delimiter(',');
  ev->add_flag("--no-pretrain", o.no_pretrain, "Replace DoRA with the scratch DNN");

  auto* ab = app.add_subcommand("ablate", "One-factor-at-a-time ablation grid");
  add_data_options(*ab, o);
  add_model_options(*ab, o, true);
  add_eval_options(*ab, o);
  ab->add_option("--axis", axes,
                 "pretext-target, feature-subset, freeze-encoder, alpha, dz, corpus-filter (repeatable)")
      ->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth_gen(synth_cfg, o, args, out);
    if (poi_cmd->parsed()) return cmd_poi_convert(facilities, properties, radii, o, args, out);
    if (pre->parsed()) return cmd_pretrain(o, args, out, err);
    if (ev->parsed()) return cmd_evaluate(o, args, out, err);
    if (ab->parsed()) {
      auto given = [&](const char* name) { return ab->count(name) > 0; };
      if (given("--alpha") && std::find(axes.begin(), axes.end(), "alpha") == axes.end()) axes.push_back("alpha");
      if (given("--dz") && o.dz.size() > 1 && std::find(axes.begin(), axes.end(), "dz") == axes.end()) {
        axes.push_back("dz");
      }
      if (given("--freeze-encoder") && std::find(axes.begin(), axes.end(), "freeze-encoder") == axes.end()) {
        axes.push_back("freeze-encoder");
      }
      return cmd_ablate(o, axes, args, out, err);
    }
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace dora::cli
