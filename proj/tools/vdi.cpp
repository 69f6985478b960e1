// vdi: command-line front end.
//
//   vdi gen-data --out DIR [--seed N] [--videos N] [--lv N] [--templates N]
//   vdi train    --data DIR --out DIR [--seed N] [--lv N] [--batch N] [--epochs N]
//   vdi eval     --checkpoint FILE --data DIR [--split NAME] [--out FILE] [--table]
//   vdi eval     --preds FILE --data DIR [--split NAME] [--out FILE] [--table]
//   vdi probe    --checkpoint FILE --data DIR [--split NAME] [--out FILE]
//   vdi parse    "sentence" [--lexicon FILE]
//
// Exit codes: 0 success, 1 usage error, 2 data or configuration error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "vdi/vdi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config, "JSON file with model/training settings")->check(CLI::ExistingFile);
  cmd->add_option("--seed", opt.seed, "Seed for every random choice");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw vdi::IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw vdi::ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vdi::IoError("cannot write '" + path.string() + "'");
  out << text;
}

/// Defaults, then the config file, then explicit flags.
void load_configs(const CommonOptions& opt, vdi::ModelConfig& model, vdi::TrainConfig& train) {
  if (!opt.config.empty()) vdi::apply_config(read_json(opt.config), &model, &train);
  if (opt.seed) {
    model.init_seed = *opt.seed;
    train.seed = *opt.seed;
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

struct Split {
  std::vector<vdi::TimedAnnotation> annotations;
  std::vector<vdi::Video> videos;
};

Split load_split(const fs::path& dir, const std::string& name) {
  Split s;
  s.videos = vdi::load_videos(dir / "videos.json");
  s.annotations = vdi::load_annotations(dir / (name + ".txt"));
  vdi::attach_durations(s.annotations, s.videos);
  return s;
}

std::vector<vdi::Sample> samples_for(const Split& split, const vdi::Model& model, std::size_t first_qid = 0) {
  auto cache = vdi::FeatureCache::from_environment();
  return vdi::build_samples(split.annotations, split.videos, model.make_visual_encoder(), model,
                            cache ? &*cache : nullptr, first_qid);
}

// ---------------------------------------------------------------------------

int gen_data(const CommonOptions& opt, const std::string& out, std::size_t videos,
             std::optional<vdi::Index> lv, std::size_t templates) {
  vdi::ModelConfig model;
  vdi::TrainConfig train;
  load_configs(opt, model, train);
  const std::uint64_t seed = opt.seed.value_or(1);

  vdi::SyntheticSpec spec;
  spec.num_videos = videos;
  spec.frames_per_video = lv.value_or(model.num_frames);
  spec.grid = model.grid_h;
  spec.num_templates = templates;
  if (model.grid_h != model.grid_w) throw vdi::ConfigError("gen-data needs a square patch grid");

  struct Part {
    const char* file;
    const char* prefix;
    std::uint64_t salt;
    bool novel;
  };
  const Part parts[] = {{"train", "tr", 1, false}, {"val", "va", 2, false}, {"test_novel", "nv", 3, true}};
  fs::create_directories(out);
  std::vector<vdi::Video> all_videos;
  json spec_json = {{"seed", seed},
                    {"num_videos", spec.num_videos},
                    {"frames_per_video", spec.frames_per_video},
                    {"grid", spec.grid},
                    {"num_templates", spec.num_templates}};
  for (const auto& part : parts) {
    vdi::SyntheticSpec s = spec;
    s.seed = vdi::hash_combine(seed, part.salt);
    s.id_prefix = part.prefix;
    s.novel_combinations = part.novel;
    auto ds = vdi::generate_synthetic(s);
    vdi::write_annotations(fs::path(out) / (std::string(part.file) + ".txt"), ds.annotations);
    json names = json::array();
    for (const auto& t : ds.templates) names.push_back(t.query());
    spec_json["templates"][part.file] = names;
    for (auto& v : ds.videos) all_videos.push_back(std::move(v));
  }
  vdi::save_videos(fs::path(out) / "videos.json", all_videos);
  write_text(fs::path(out) / "spec.json", spec_json.dump(2) + "\n");
  std::cout << "wrote " << all_videos.size() << " videos to " << out << "\n";
  return 0;
}

int train_cmd(const CommonOptions& opt, const std::string& data, const std::string& out,
              std::optional<vdi::Index> lv, std::optional<std::size_t> batch, std::optional<int> epochs,
              const std::string& init_checkpoint) {
  vdi::ModelConfig mc;
  vdi::TrainConfig tc;
  load_configs(opt, mc, tc);
  if (lv) mc.num_frames = *lv;
  if (batch) tc.batch_size = *batch;
  if (epochs) tc.max_epochs = *epochs;
  tc.validate();

  vdi::Model model(mc);
  if (!init_checkpoint.empty()) vdi::load_into(model, vdi::load_checkpoint(init_checkpoint));
  const Split train_split = load_split(data, "train");
  const Split val_split = load_split(data, "val");
  const auto train = samples_for(train_split, model);
  const auto val = samples_for(val_split, model, train.size());

  const auto state = vdi::fit(model, train, val, tc, [](const vdi::EpochRecord& r) {
    std::fprintf(stderr, "epoch %3d  loss %.5f  val R@1,IoU=0.5 %.2f  mIoU %.2f%s\n", r.epoch, r.mean_loss,
                 r.validation.recall_at(1, 0.5), r.validation.miou, r.improved ? "  *" : "");
    return true;
  });

  const fs::path dir(out);
  vdi::save_checkpoint(dir / "model.ckpt", vdi::make_checkpoint(model, tc, state.rng_state));
  vdi::save_checkpoint(dir / "inference.ckpt", vdi::make_checkpoint(model, tc, state.rng_state, false));

  json history = json::array();
  for (const auto& r : state.history) {
    history.push_back({{"epoch", r.epoch},
                       {"loss", r.mean_loss},
                       {"iou", r.iou},
                       {"cl", r.cl},
                       {"vc", r.vc},
                       {"sd", r.sd},
                       {"validation", vdi::to_json(r.validation)},
                       {"improved", r.improved}});
  }
  const json metrics = {{"model", vdi::to_json(mc)},
                        {"train", vdi::to_json(tc)},
                        {"epochs_run", state.epoch},
                        {"best_epoch", state.best_epoch},
                        {"best_validation", vdi::to_json(state.history[state.best_epoch - 1].validation)},
                        {"history", history},
                        {"config_digest", vdi::config_digest(mc, tc)},
                        {"dataset_digest", vdi::dataset_digest(train_split.annotations, train_split.videos)}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  std::cout << "best epoch " << state.best_epoch << ", checkpoint in " << (dir / "model.ckpt").string() << "\n";
  return 0;
}

int eval_cmd(const CommonOptions& opt, const std::string& checkpoint, const std::string& preds_path,
             const std::string& data, const std::string& split_name, const std::string& out, bool table) {
  std::vector<vdi::MomentPrediction> preds;
  if (!preds_path.empty()) {
    std::ifstream in(preds_path);
    if (!in) throw vdi::IoError("cannot open predictions '" + preds_path + "'");
    preds = vdi::read_predictions(in);
  }
  if (data.empty()) throw vdi::ConfigError("eval needs --data");
  const Split split = load_split(data, split_name);

  vdi::ModelConfig mc;
  vdi::TrainConfig tc;
  std::vector<vdi::GroundTruth> truths;
  if (preds_path.empty()) {
    const auto ck = vdi::load_checkpoint(checkpoint);
    mc = ck.model;
    tc = ck.train;
    vdi::Model model = vdi::model_from_checkpoint(ck);
    const auto samples = samples_for(split, model);
    preds = vdi::predict_all(model, samples);
    truths = vdi::ground_truths(samples);
  } else {
    load_configs(opt, mc, tc);
    for (std::size_t k = 0; k < split.annotations.size(); ++k) {
      truths.push_back({k, {split.annotations[k].start_s, split.annotations[k].end_s}});
    }
  }
  const vdi::EvalReport report = vdi::evaluate(preds, truths);
  json j = vdi::to_json(report);
  j["split"] = split_name;
  j["config_digest"] = vdi::config_digest(mc, tc);
  j["dataset_digest"] = vdi::dataset_digest(split.annotations, split.videos);
  j["metadata"] = {{"timestamp", utc_timestamp()}};
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text(out, j.dump(2) + "\n");
  }
  if (table) std::cout << vdi::format_table(report, preds_path.empty() ? "model" : "preds");
  return 0;
}

int probe_cmd(const std::string& checkpoint, const std::string& data, const std::string& split_name,
              const std::string& out) {
  const auto ck = vdi::load_checkpoint(checkpoint);
  vdi::Model model = vdi::model_from_checkpoint(ck);
  const Split split = load_split(data, split_name);
  const auto report = vdi::dynamics_probe(model, samples_for(split, model));
  json j = vdi::to_json(report);
  j["split"] = split_name;
  j["config_digest"] = vdi::config_digest(ck.model, ck.train);
  j["dataset_digest"] = vdi::dataset_digest(split.annotations, split.videos);
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text(out, j.dump(2) + "\n");
  }
  return 0;
}

int parse_cmd(const CommonOptions& opt, const std::string& sentence, const std::string& lexicon_path) {
  vdi::ModelConfig mc;
  vdi::TrainConfig tc;
  load_configs(opt, mc, tc);
  std::optional<vdi::text::Lexicon> lexicon;
  if (!lexicon_path.empty()) lexicon = vdi::text::Lexicon::load(lexicon_path);
  const vdi::text::RuleBasedChunker chunker = lexicon ? vdi::text::RuleBasedChunker(*lexicon)
                                                      : vdi::text::RuleBasedChunker();
  const auto q = vdi::text::QuerySentence::parse(sentence);
  const auto spans = chunker.extract(q);
  std::cout << "tokens:  " << vdi::text::join(q.tokens) << "\n";
  std::cout << "chunks: ";
  for (const auto& s : spans) std::cout << " (" << s.start_token << "," << s.end_token << ")";
  std::cout << "\n";
  const auto pair = vdi::text::make_masked_pair(q, spans, mc.mask_token);
  std::cout << "static:  " << vdi::text::join(pair.static_query) << "\n";
  std::cout << "dynamic: " << vdi::text::join(pair.dynamic_query) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-dynamic injection for video moment retrieval"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string out, data, checkpoint, preds, split = "test_novel", lexicon, sentence;
  std::optional<vdi::Index> lv;
  std::optional<std::size_t> batch;
  std::optional<int> epochs;
  std::size_t videos = 50, templates = 4;
  bool table = false;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--videos", videos, "Videos per split")->check(CLI::PositiveNumber);
  gen->add_option("--lv", lv, "Frames per video")->check(CLI::PositiveNumber);
  gen->add_option("--templates", templates, "Seen (noun, verb) templates")->check(CLI::Range(1, 15));

  auto* train = app.add_subcommand("train", "Train and write a checkpoint and metrics");
  add_common(train, common);
  train->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--lv", lv, "Sampled frames per video")->check(CLI::PositiveNumber);
  train->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--epochs", epochs, "Maximum epochs")->check(CLI::PositiveNumber);
  train->add_option("--checkpoint", checkpoint, "Initial weights");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint or a predictions file");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--preds", preds, "Predictions (JSON lines)");
  eval->add_option("--data", data, "Dataset directory");
  eval->add_option("--split", split, "Annotation file stem inside --data");
  eval->add_option("--out", out, "Report path (stdout when omitted)");
  eval->add_flag("--table", table, "Also print a results table");

  auto* probe = app.add_subcommand("probe", "Compare full, static and dynamic queries");
  add_common(probe, common);
  probe->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  probe->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--split", split, "Annotation file stem inside --data");
  probe->add_option("--out", out, "Report path (stdout when omitted)");

  auto* parse = app.add_subcommand("parse", "Show noun chunks and the masked query pair");
  add_common(parse, common);
  parse->add_option("sentence", sentence, "Query sentence")->required();
  parse->add_option("--lexicon", lexicon, "Word-class lexicon (word<TAB>CLASS per line)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(common, out, videos, lv, templates);
    if (*train) return train_cmd(common, data, out, lv, batch, epochs, checkpoint);
    if (*eval) {
      if (checkpoint.empty() == preds.empty()) {
        std::cerr << "eval: give exactly one of --checkpoint or --preds\n";
        return 1;
      }
      return eval_cmd(common, checkpoint, preds, data, split, out, table);
    }
    if (*probe) return probe_cmd(checkpoint, data, split, out);
    if (*parse) return parse_cmd(common, sentence, lexicon);
  } catch (const vdi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
