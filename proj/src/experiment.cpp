/* Copyright 2026 The advseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "advseg/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "advseg/checkpoint.hpp"

namespace advseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads keys of one JSON object and rejects any key that was never asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) throw ConfigError("unknown configuration key: " + name_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

std::string xi_tag(double xi) { return "xi_" + fmt_g(xi); }

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "config");
  root.get("seed", c.seed);
  std::string out = c.output_dir.string();
  root.get("output_dir", out);
  c.output_dir = out;

  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    s.get("source", c.data.source);
    s.get("path", c.data.path);
    s.get("num_subjects", c.data.num_subjects);
    s.get("slices_per_subject", c.data.slices_per_subject);
    s.get("rows", c.data.rows);
    s.get("cols", c.data.cols);
    s.get("num_classes", c.data.num_classes);
    s.get("split", c.data.split);
    s.finish();
  }
  if (const json* d = root.child("segmenter")) {
    Section s(*d, "segmenter");
    s.get("depth", c.segmenter.model.depth);
    s.get("base_channels", c.segmenter.model.base_channels);
    s.get("epochs", c.segmenter.train.epochs);
    s.get("batch_size", c.segmenter.train.batch_size);
    s.get("learning_rate", c.segmenter.train.learning_rate);
    s.get("patch_size", c.segmenter.train.patch_size);
    s.get("patches_per_slice", c.segmenter.train.patches_per_slice);
    s.finish();
  }
  if (const json* d = root.child("attacker")) {
    Section s(*d, "attacker");
    s.get("latent_dim", c.attacker.model.latent_dim);
    s.get("base_channels", c.attacker.model.base_channels);
    s.get("d_max", c.attacker.model.d_max);
    s.get("v_max", c.attacker.model.v_max);
    s.get("output_gain", c.attacker.model.output_gain);
    s.get("critic_base_channels", c.attacker.critic_base_channels);
    s.finish();
  }
  if (const json* d = root.child("trainer")) {
    Section s(*d, "trainer");
    TrainConfig& t = c.trainer;
    s.get("learning_rate", t.learning_rate);
    s.get("rmsprop_decay", t.rmsprop_decay);
    s.get("rmsprop_eps", t.rmsprop_eps);
    s.get("batch_size", t.batch_size);
    s.get("total_steps", t.total_steps);
    s.get("critic_steps_per_gen", t.critic_steps_per_gen);
    s.get("clip_value", t.clip_value);
    s.get("lambda_d", t.weights.lambda_d);
    s.get("lambda_v", t.weights.lambda_v);
    std::string norm = to_string(t.weights.norm_mode);
    s.get("norm_mode", norm);
    try {
      t.weights.norm_mode = parse_norm_mode(norm);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("trainer.") + e.what());
    }
    s.get("kl_weight", t.kl_weight);
    s.get("checkpoint_every", t.checkpoint_every);
    s.finish();
  }
  if (const json* d = root.child("eval")) {
    Section s(*d, "eval");
    s.get("xi_list", c.eval.xi_list);
    std::vector<std::string> modes;
    s.get("modes", modes);
    if (d->contains("modes")) {
      c.eval.modes.clear();
      for (const auto& m : modes) {
        try {
          c.eval.modes.push_back(parse_attack_mode(m));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("eval.modes: ") + e.what());
        }
      }
    }
    s.get("montage_cases", c.eval.montage_cases);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  std::vector<std::string> modes;
  for (AttackMode m : eval.modes) modes.push_back(to_string(m));
  return {
      {"seed", seed},
      {"output_dir", output_dir.string()},
      {"data",
       {{"source", data.source},
        {"path", data.path},
        {"num_subjects", data.num_subjects},
        {"slices_per_subject", data.slices_per_subject},
        {"rows", data.rows},
        {"cols", data.cols},
        {"num_classes", data.num_classes},
        {"split", data.split}}},
      {"segmenter",
       {{"depth", segmenter.model.depth},
        {"base_channels", segmenter.model.base_channels},
        {"epochs", segmenter.train.epochs},
        {"batch_size", segmenter.train.batch_size},
        {"learning_rate", segmenter.train.learning_rate},
        {"patch_size", segmenter.train.patch_size},
        {"patches_per_slice", segmenter.train.patches_per_slice}}},
      {"attacker",
       {{"latent_dim", attacker.model.latent_dim},
        {"base_channels", attacker.model.base_channels},
        {"d_max", attacker.model.d_max},
        {"v_max", attacker.model.v_max},
        {"output_gain", attacker.model.output_gain},
        {"critic_base_channels", attacker.critic_base_channels}}},
      {"trainer",
       {{"learning_rate", trainer.learning_rate},
        {"rmsprop_decay", trainer.rmsprop_decay},
        {"rmsprop_eps", trainer.rmsprop_eps},
        {"batch_size", trainer.batch_size},
        {"total_steps", trainer.total_steps},
        {"critic_steps_per_gen", trainer.critic_steps_per_gen},
        {"clip_value", trainer.clip_value},
        {"lambda_d", trainer.weights.lambda_d},
        {"lambda_v", trainer.weights.lambda_v},
        {"norm_mode", to_string(trainer.weights.norm_mode)},
        {"kl_weight", trainer.kl_weight},
        {"checkpoint_every", trainer.checkpoint_every}}},
      {"eval", {{"xi_list", eval.xi_list}, {"modes", modes}, {"montage_cases", eval.montage_cases}}},
  };
}

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  check(!output_dir.empty(), "output_dir must not be empty");
  check(data.source == "phantom" || data.source == "directory", "data.source must be \"phantom\" or \"directory\"");
  if (data.source == "directory") {
    check(!data.path.empty(), "data.path is required when data.source is \"directory\"");
    check(fs::is_directory(data.path), "data.path does not exist: " + data.path);
  }
  check(data.num_subjects >= 0, "data.num_subjects must be >= 0");
  check(data.source != "phantom" || data.num_subjects > 0, "empty dataset requested");
  check(data.slices_per_subject >= 1, "data.slices_per_subject must be >= 1");
  check(data.rows >= 16 && data.cols >= 16, "data.rows and data.cols must be >= 16");
  check(data.num_classes >= 1, "data.num_classes must be >= 1");
  check(data.split[0] >= 1 && data.split[1] >= 0 && data.split[2] >= 1, "data.split needs >= 1 train and test subject");
  check(segmenter.train.epochs >= 0, "segmenter.epochs must be >= 0");
  check(segmenter.train.batch_size >= 1, "segmenter.batch_size must be >= 1");
  check(segmenter.train.learning_rate > 0, "segmenter.learning_rate must be > 0");
  check(segmenter.train.patches_per_slice >= 1, "segmenter.patches_per_slice must be >= 1");
  check(segmenter.train.patch_size[0] <= data.rows && segmenter.train.patch_size[1] <= data.cols,
        "segmenter.patch_size exceeds the slice size");
  check(attacker.critic_base_channels >= 1, "attacker.critic_base_channels must be >= 1");
  check(eval.montage_cases >= 0, "eval.montage_cases must be >= 0");
  for (double xi : eval.xi_list) check(xi > 0, "eval.xi_list values must be > 0");
  try {
    AttackerConfig a = attacker.model;
    a.rows = data.rows;
    a.cols = data.cols;
    a.validate();
    trainer.validate();
    UNet<float>(UNetConfig{segmenter.model.depth, segmenter.model.base_channels, data.num_classes, 0})
        .check_input(segmenter.train.patch_size[0], segmenter.train.patch_size[1]);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  check(data.rows % 16 == 0 && data.cols % 16 == 0, "data.rows and data.cols must be multiples of 16");
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

Experiment::Experiment(ExperimentConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force) {
  cfg_.validate();
  cfg_.segmenter.model.num_classes = cfg_.data.num_classes;
  cfg_.segmenter.model.seed = cfg_.seed;
  cfg_.segmenter.train.seed = cfg_.seed;
  cfg_.attacker.model.rows = cfg_.data.rows;
  cfg_.attacker.model.cols = cfg_.data.cols;
  cfg_.attacker.model.seed = cfg_.seed;
  cfg_.trainer.seed = cfg_.seed;
}

fs::path Experiment::data_dir() const {
  return cfg_.data.source == "directory" ? fs::path(cfg_.data.path) : cfg_.output_dir / "data";
}

void Experiment::prepare_output(const fs::path& dir) const {
  if (fs::exists(dir)) {
    if (!force_) throw ConfigError(dir.string() + " already exists (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

DatasetSplit Experiment::make_phantoms() const {
  const DataConfig& d = cfg_.data;
  if (d.source != "phantom") throw ConfigError("make-phantoms requires data.source = \"phantom\"");
  if (d.num_subjects == 0) throw ConfigError("empty dataset requested");
  if (d.split[0] + d.split[1] + d.split[2] != d.num_subjects) {
    throw ConfigError("data.split must sum to data.num_subjects");
  }
  const fs::path dir = data_dir();
  prepare_output(dir);
  std::seed_seq seq{std::uint32_t(cfg_.seed), std::uint32_t(cfg_.seed >> 32), 0x7068u};
  std::vector<std::uint32_t> raw(std::size_t(d.num_subjects) * 2);
  seq.generate(raw.begin(), raw.end());
  std::vector<std::string> ids;
  for (int i = 0; i < d.num_subjects; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%03d", i);
    const std::uint64_t s = (std::uint64_t(raw[std::size_t(2 * i)]) << 32) | raw[std::size_t(2 * i + 1)];
    const Subject sub = make_phantom_subject(s, d.slices_per_subject, {d.rows, d.cols}, d.num_classes, id);
    save_volume(dir / id, sub.volume, sub.labels);
    ids.emplace_back(id);
  }
  const DatasetSplit split = split_dataset(ids, d.split, cfg_.seed);
  write_json(dir / "split.json", split.to_json());
  return split;
}

DatasetSplit Experiment::load_split() const {
  const fs::path dir = data_dir();
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  const fs::path file = dir / "split.json";
  if (fs::exists(file)) {
    std::ifstream in(file);
    try {
      return DatasetSplit::from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw DataError(file.string() + ": " + e.what());
    }
  }
  std::vector<std::string> ids;
  for (const auto& s : load_dataset(dir, cfg_.data.num_classes)) ids.push_back(s.volume.subject_id);
  return split_dataset(ids, cfg_.data.split, cfg_.seed);
}

SliceSet Experiment::load_slices(const std::string& part) const {
  const DatasetSplit split = load_split();
  const std::vector<std::string>* ids = part == "train" ? &split.train_ids
                                        : part == "val" ? &split.val_ids
                                        : part == "test" ? &split.test_ids
                                                         : nullptr;
  if (ids == nullptr) throw std::invalid_argument("unknown split part " + part);
  SliceSet out;
  const fs::path dir = data_dir();
  for (const auto& id : *ids) {
    fs::path path = dir / id;
    if (!fs::exists(path)) {
      for (const char* ext : {"_img.nii.gz", "_img.nii"}) {
        if (fs::exists(dir / (id + ext))) path = dir / (id + ext);
      }
    }
    const Subject s = load_volume(path, cfg_.data.num_classes);
    if (s.volume.rows != cfg_.data.rows || s.volume.cols != cfg_.data.cols) {
      throw DataError(path.string() + ": slice size differs from data.rows x data.cols");
    }
    const Volume v = normalize(s.volume);
    for (int k = 0; k < v.slices; ++k) out.add(v.slice(k), s.labels.slice(k), id);
  }
  return out;
}

SegTrainResult Experiment::train_segmenter() const {
  const SliceSet train = load_slices("train");
  const SliceSet val = load_slices("val");
  if (train.empty()) throw DataError("no training slices");
  prepare_output(segmenter_dir());
  SegTrainResult r = advseg::train_segmenter(UNet<float>(cfg_.segmenter.model), train, val, cfg_.segmenter.train);
  const UNetConfig& m = cfg_.segmenter.model;
  save_network(segmenter_dir() / "model", r.model, "segmenter",
               {{"depth", m.depth},
                {"base_channels", m.base_channels},
                {"num_classes", m.num_classes},
                {"best_epoch", r.best_epoch},
                {"best_val_dice", r.best_val_dice}});
  std::ofstream curve(segmenter_dir() / "curve.csv");
  curve << "epoch,train_xent,val_dice\n" << std::setprecision(9);
  for (const auto& e : r.curve) curve << e.epoch << "," << e.train_xent << "," << e.val_dice << "\n";
  if (!curve) throw DataError("cannot write " + (segmenter_dir() / "curve.csv").string());
  return r;
}

UNet<float> Experiment::load_segmenter() const {
  const fs::path dir = segmenter_dir() / "model";
  if (!fs::exists(dir / "manifest.json")) throw DataError("segmenter checkpoint not found: " + dir.string());
  const json meta = read_archive(dir).meta;
  UNet<float> seg(UNetConfig{meta.at("depth").get<int>(), meta.at("base_channels").get<int>(),
                             meta.at("num_classes").get<int>(), 0});
  load_network(dir, seg, "segmenter");
  seg.freeze();
  return seg;
}

AttackTrainResult Experiment::train_attack(double xi) const {
  if (!(xi > 0)) throw ConfigError("xi must be > 0");
  const UNet<float> seg = load_segmenter();
  const SliceSet train = load_slices("train");
  if (train.empty()) throw DataError("no training slices");
  const fs::path dir = attacker_dir(xi);
  prepare_output(dir);

  TrainConfig tc = cfg_.trainer;
  tc.weights.xi = xi;
  tc.dump_dir = dir;
  if (tc.checkpoint_every > 0) tc.checkpoint_dir = dir / "checkpoints";
  const AttackerModel<float> gen(cfg_.attacker.model);
  const CriticModel<float> critic(
      CriticConfig{cfg_.data.rows, cfg_.data.cols, cfg_.attacker.critic_base_channels, cfg_.seed + 1});

  const std::uint64_t seg_hash = seg.state_hash();
  AttackTrainResult r = train_attacker(gen, critic, seg, train.images, tc);
  if (seg.state_hash() != seg_hash) throw std::logic_error("segmenter changed during attack training");

  const AttackerConfig& a = cfg_.attacker.model;
  const json gen_meta = {{"xi", xi},
                         {"latent_dim", a.latent_dim},
                         {"base_channels", a.base_channels},
                         {"rows", a.rows},
                         {"cols", a.cols},
                         {"d_max", a.d_max},
                         {"v_max", a.v_max},
                         {"steps", tc.total_steps}};
  save_network(dir / "generator", r.generator, "generator", gen_meta);
  save_network(dir / "critic", r.critic, "critic",
               {{"xi", xi}, {"base_channels", cfg_.attacker.critic_base_channels}, {"rows", a.rows}, {"cols", a.cols}});
  r.log.write_csv(dir / "train_log.csv");
  write_json(dir / "meta.json", {{"xi", xi},
                                 {"seed", cfg_.seed},
                                 {"segmenter_hash", hash_hex(seg_hash)},
                                 {"generator_hash", hash_hex(r.generator.state_hash())},
                                 {"critic_hash", hash_hex(r.critic.state_hash())},
                                 {"config", cfg_.to_json()}});
  return r;
}

AttackerModel<float> Experiment::load_generator(double xi) const {
  const fs::path dir = attacker_dir(xi) / "generator";
  const json meta = read_archive(dir).meta;
  AttackerConfig a;
  a.rows = meta.at("rows").get<int>();
  a.cols = meta.at("cols").get<int>();
  a.latent_dim = meta.at("latent_dim").get<int>();
  a.base_channels = meta.at("base_channels").get<int>();
  a.d_max = meta.at("d_max").get<double>();
  a.v_max = meta.at("v_max").get<double>();
  AttackerModel<float> gen(a);
  load_network(dir, gen, "generator");
  return gen;
}

void Experiment::render_montage_for(const AttackerModel<float>& gen, const UNet<float>& seg, const SliceSet& test,
                                    double xi) const {
  const std::size_t n = std::min(test.size(), std::size_t(cfg_.eval.montage_cases));
  if (n == 0) return;
  const std::vector<AttackSample> attacks = sample_test_attacks(gen, test, cfg_.seed);
  std::vector<MontageCase> cases;
  for (std::size_t i = 0; i < n; ++i) {
    const SoftSegmentation s0 = segment(seg, test.images[i]);
    const SoftSegmentation sdv = segment(seg, attacks[i].attacked);
    cases.push_back({test.images[i], test.labels[i], argmax_labels(s0), attacks[i].attacked, attacks[i].bias,
                     argmax_labels(sdv)});
    save_attack_bundle(eval_dir() / "bundles" / xi_tag(xi) / ("case_" + std::to_string(i)), test.images[i],
                       attacks[i], s0, sdv,
                       {{"xi", xi}, {"seed", cfg_.seed}, {"subject", test.subjects[i]},
                        {"generator_hash", hash_hex(gen.state_hash())}, {"segmenter_hash", hash_hex(seg.state_hash())}});
  }
  render_montage(cases, eval_dir() / ("montage_" + xi_tag(xi) + ".png"));
}

ReportTable Experiment::evaluate(const std::vector<double>& xis, const std::vector<AttackMode>& modes) const {
  if (xis.empty()) throw ConfigError("no xi values to evaluate");
  std::string missing;
  for (double xi : xis) {
    if (!fs::exists(attacker_dir(xi) / "generator" / "manifest.json")) {
      missing += (missing.empty() ? "" : ", ") + attacker_dir(xi).string();
    }
  }
  if (!missing.empty()) throw DataError("missing attacker checkpoints: " + missing);
  const UNet<float> seg = load_segmenter();
  const SliceSet test = load_slices("test");
  if (test.empty()) throw DataError("no test slices");
  std::map<double, AttackerModel<float>> gens;
  json hashes = json::object();
  for (double xi : xis) {
    gens.emplace(xi, load_generator(xi));
    hashes[xi_tag(xi)] = hash_hex(gens.at(xi).state_hash());
  }
  prepare_output(eval_dir());
  const ReportTable table = sweep_xi(gens, seg, test, xis, modes, cfg_.seed);
  table.write_csv(eval_dir() / "report.csv");
  for (double xi : xis) render_montage_for(gens.at(xi), seg, test, xi);
  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"xi", r.xi},
                    {"mode", to_string(r.mode)},
                    {"dice", r.per_class_dice},
                    {"perceptibility", r.perceptibility},
                    {"success", r.success}});
  }
  write_json(eval_dir() / "report.json", {{"seed", cfg_.seed},
                                          {"segmenter_hash", hash_hex(seg.state_hash())},
                                          {"generator_hashes", hashes},
                                          {"baseline_dice", table.baseline_dice},
                                          {"rows", rows},
                                          {"config", cfg_.to_json()}});
  return table;
}

void Experiment::montage(const std::vector<double>& xis) const {
  const UNet<float> seg = load_segmenter();
  const SliceSet test = load_slices("test");
  if (test.empty()) throw DataError("no test slices");
  fs::create_directories(eval_dir());
  for (double xi : xis) render_montage_for(load_generator(xi), seg, test, xi);
}

}  // namespace advseg
