#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "symphony/checkpoint.hpp"
#include "symphony/corpus.hpp"
#include "symphony/errors.hpp"
#include "symphony/generate.hpp"
#include "symphony/grpo.hpp"
#include "symphony/metrics.hpp"
#include "symphony/midi.hpp"
#include "symphony/reward.hpp"
#include "symphony/skeleton_source.hpp"
#include "symphony/tokenizer.hpp"
#include "symphony/train.hpp"

using namespace symphony;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitParse = 2;
constexpr int kExitCapacity = 3;
constexpr int kExitShape = 4;
constexpr int kExitRemote = 5;

/// Reported to the user with its own exit code and a JSON diagnostic on stderr.
struct CommandError {
  int code;
  json detail;
};

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  return json::parse(in);
}

struct Config {
  json root = json::object();

  json section(const char* name) const { return root.contains(name) ? root.at(name) : json::object(); }
};

Config load_config(const std::string& path) {
  Config c;
  if (!path.empty()) c.root = read_json_file(path);
  return c;
}

// ---- analyze --------------------------------------------------------------

int cmd_analyze(const std::string& midi_path, const std::string& emit_midi) {
  const Score score = parse_midi(read_file(midi_path));
  const auto sk = analyze_skeleton(score);
  if (!emit_midi.empty()) write_file(emit_midi, write_midi(skeleton_to_score(sk)));
  emit(skeleton_to_json(sk));
  return 0;
}

// ---- tokenize / detokenize --------------------------------------------------

int cmd_tokenize(const std::string& midi_path, const std::string& out_path) {
  const Score score = parse_midi(read_file(midi_path));
  json bars = json::array();
  json overflow = json::array();
  for (std::size_t b = 0; b < score.bars.size(); ++b) {
    const auto& bar = score.bars[b];
    json tracks = json::array();
    for (const auto& tb : bar.tracks) {
      try {
        const auto seq = encode(tb, bar.bar_length);
        tracks.push_back({{"track_id", tb.track_id},
                          {"instrument_id", tb.instrument_id},
                          {"tokens", tokens_to_json(seq.tokens)}});
      } catch (const TruncationError& e) {
        overflow.push_back({{"bar", b},
                            {"track_id", tb.track_id},
                            {"tokens", e.full().size()},
                            {"capacity", e.capacity()}});
      }
    }
    bars.push_back({{"bar_length", bar.bar_length}, {"tracks", tracks}});
  }
  if (!overflow.empty()) throw CommandError{kExitCapacity, {{"error", "cells exceed capacity"}, {"cells", overflow}}};
  const json doc = {{"bpm", score.bpm}, {"bars", bars}};
  if (out_path.empty()) {
    emit(doc);
  } else {
    std::ofstream(out_path) << doc.dump() << "\n";
    emit({{"path", out_path}, {"bars", bars.size()}});
  }
  return 0;
}

Score score_from_token_json(const json& doc) {
  Score score;
  score.bpm = doc.value("bpm", kDefaultBpm);
  for (const auto& jb : doc.at("bars")) {
    Bar bar;
    bar.bar_length = jb.at("bar_length").get<int>();
    for (const auto& jt : jb.at("tracks")) {
      TrackBar tb = decode(tokens_from_json(jt.at("tokens")), bar.bar_length);
      tb.track_id = jt.at("track_id").get<int>();
      tb.instrument_id = jt.at("instrument_id").get<int>();
      bar.tracks.push_back(std::move(tb));
    }
    score.bars.push_back(std::move(bar));
  }
  validate(score);
  return score;
}

int cmd_detokenize(const std::string& tokens_path, const std::string& out_path) {
  const Score score = score_from_token_json(read_json_file(tokens_path));
  const auto bytes = write_midi(score);
  write_file(out_path, bytes);
  emit({{"path", out_path}, {"bars", score.bars.size()}, {"bytes", bytes.size()}});
  return 0;
}

// ---- metrics ---------------------------------------------------------------

DissonanceParams dissonance_params(const Config& cfg, std::optional<double> hn, std::optional<double> nn) {
  const auto s = sampling_from_json(cfg.section("sampling"));
  DissonanceParams p = s.params;
  if (hn) p.lambda_hn = *hn;
  if (nn) p.lambda_nn = *nn;
  return p;
}

int cmd_metrics(const std::string& midi_path, const std::string& skeleton_path, const DissonanceParams& params) {
  const Score score = parse_midi(read_file(midi_path));
  std::optional<HarmonySkeleton> sk;
  if (!skeleton_path.empty()) {
    const auto all = read_skeletons(skeleton_path);
    if (all.size() != 1) throw ValidationError("expected exactly one skeleton in " + skeleton_path);
    sk = all.front();
  }
  emit(report_to_json(evaluate(score, sk ? &*sk : nullptr, params)));
  return 0;
}

// ---- generate --------------------------------------------------------------

std::vector<HarmonySkeleton> toy_skeleton_corpus() {
  std::vector<HarmonySkeleton> out;
  for (const auto& s : toy_scores()) out.push_back(analyze_skeleton(s));
  return out;
}

HarmonySkeleton sample_toy_skeleton(std::uint64_t seed, int bars) {
  ToySkeletonDecoder dec;
  dec.train(toy_skeleton_corpus(), 60, 1e-2);
  std::mt19937_64 rng(seed);
  return dec.sample(rng, std::vector<int>(static_cast<std::size_t>(bars), 32));
}

struct SamplingFlags {
  std::optional<std::uint64_t> seed;
  std::optional<double> top_p, temperature, lambda_hn, lambda_nn;
  bool open_ranges = false;
};

SamplingConfig sampling_config(const Config& cfg, const SamplingFlags& f) {
  auto s = sampling_from_json(cfg.section("sampling"));
  if (f.seed) s.seed = *f.seed;
  if (f.top_p) s.top_p = *f.top_p;
  if (f.temperature) s.temperature = *f.temperature;
  if (f.lambda_hn) s.params.lambda_hn = *f.lambda_hn;
  if (f.lambda_nn) s.params.lambda_nn = *f.lambda_nn;
  if (f.open_ranges) s.range_table = open_range_table();
  return sampling_from_json(sampling_to_json(s));
}

int cmd_generate(const Config& cfg, const std::string& checkpoint, const std::string& skeleton_path, int toy_bars,
                 const std::string& out_path, const SamplingFlags& flags) {
  const auto ckpt = load_checkpoint(checkpoint);
  const auto sampling = sampling_config(cfg, flags);
  HarmonySkeleton sk;
  if (!skeleton_path.empty()) {
    const auto all = read_skeletons(skeleton_path);
    if (all.empty()) throw ValidationError("no skeleton in " + skeleton_path);
    sk = all.front();
  } else {
    sk = sample_toy_skeleton(sampling.seed, toy_bars);
  }
  const auto g = generate_window(*ckpt.model, sk, sampling);
  const auto bytes = write_midi(g.score);
  write_file(out_path, bytes);
  emit({{"path", out_path},
        {"seed", sampling.seed},
        {"bars", g.score.bars.size()},
        {"metrics", report_to_json(evaluate(g.score, &sk, sampling.params))},
        {"retries", g.stats.retries},
        {"fallbacks", g.stats.fallbacks},
        {"forced_eot", g.stats.forced_eot},
        {"log", g.stats.log}});
  return 0;
}

// ---- train-toy -------------------------------------------------------------

int cmd_train_toy(const Config& cfg, const std::string& out_path, const std::string& resume,
                  const std::string& log_path, std::optional<int> steps) {
  auto tc = cfg.root.contains("train") ? train_from_json(cfg.section("train")) : toy_train_config();
  if (steps) tc.steps = *steps;
  std::unique_ptr<model::HierModel> m;
  std::optional<LoadedCheckpoint> loaded;
  if (!resume.empty()) {
    loaded = load_checkpoint(resume);
    m = std::move(loaded->model);
  } else {
    m = std::make_unique<model::HierModel>(
        cfg.root.contains("model") ? model::config_from_json(cfg.section("model")) : toy_model_config());
  }
  optim::AdamW opt(m->params(), adamw_config(tc));
  if (loaded && loaded->has_optimizer) restore_optimizer(*loaded, opt);
  const auto corpus = toy_corpus(m->config());

  std::ofstream log;
  if (!log_path.empty()) log.open(log_path);
  const long offset = opt.steps_taken();
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train(*m, opt, corpus, tc, [&](int step, const model::LossBreakdown& l) {
    if (log) {
      log << json{{"step", offset + step}, {"total", l.total}, {"l_meta", l.l_meta}, {"l_harm", l.l_harm},
                  {"l_music", l.l_music}}
                 .dump()
          << "\n";
    }
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(out_path, *m, &opt, {{"train", train_to_json(tc)}});
  emit({{"path", out_path},
        {"steps_run", r.steps_run},
        {"reached_target_at", r.reached_target_at},
        {"target_loss", tc.target_loss},
        {"final_loss", r.last.total},
        {"seconds", seconds}});
  return 0;
}

// ---- grpo-toy --------------------------------------------------------------

int cmd_grpo_bandit(const Config& cfg, int steps, std::uint64_t seed) {
  auto gc = cfg.root.contains("grpo") ? grpo_from_json(cfg.section("grpo")) : GrpoConfig{};
  const auto r = run_bandit(gc, {0.0, 1.0}, steps, 0.1, seed);
  // With rewards 0 and 1 the expected reward equals the better action's probability.
  emit({{"mode", "bandit"}, {"steps", steps}, {"mean_reward", r.best_action_prob}});
  return 0;
}

int cmd_grpo_toy(const Config& cfg, const std::string& checkpoint, const std::string& out_path,
                 const std::string& log_path, int epochs, std::uint64_t seed, int workers) {
  auto policy = load_checkpoint(checkpoint);
  auto reference = load_checkpoint(checkpoint);
  GrpoRunConfig rc;
  rc.grpo.K = 4;
  rc.grpo.G = 8;
  rc.grpo.lr = 1e-5;
  if (cfg.root.contains("grpo")) rc.grpo = grpo_from_json(cfg.section("grpo"));
  rc.sampling = sampling_from_json(cfg.section("sampling"));
  rc.reward = reward_from_json(cfg.section("reward"));
  rc.epochs = epochs;
  rc.seed = seed;
  rc.workers = workers;

  std::unique_ptr<EmbeddingClient> client;
  if (rc.reward.kind == RewardKind::RemoteEmbedding ||
      (rc.reward.kind == RewardKind::Composite && rc.reward.base == RewardKind::RemoteEmbedding)) {
    client = std::make_unique<RemoteEmbeddingClient>(rc.reward);
  }

  optim::AdamWConfig oc;
  oc.weight_decay = 0.0;
  optim::AdamW opt(policy.model->params(), oc);
  std::ofstream log;
  if (!log_path.empty()) log.open(log_path);
  json epochs_json = json::array();
  int used = 0, discarded = 0;
  run_grpo(
      *policy.model, *reference.model, opt, toy_skeleton_corpus(), rc, client.get(),
      [&](const RolloutRecord& r) {
        if (log) log << rollout_to_json(r).dump() << "\n";
      },
      [&](const EpochSummary& e) {
        used += e.groups_used;
        discarded += e.groups_discarded;
        epochs_json.push_back({{"epoch", e.epoch},
                               {"mean_reward", e.mean_reward},
                               {"groups_used", e.groups_used},
                               {"groups_discarded", e.groups_discarded},
                               {"step_applied", e.step_applied},
                               {"loss", e.step.loss},
                               {"kl", e.step.kl}});
      });
  if (used == 0 && discarded > 0) {
    throw CommandError{kExitRemote, {{"error", "every rollout group lost its reward"}, {"groups", discarded}}};
  }
  save_checkpoint(out_path, *policy.model, &opt, {{"grpo", grpo_to_json(rc.grpo)}});
  emit({{"path", out_path}, {"grpo", grpo_to_json(rc.grpo)}, {"epochs", epochs_json}});
  return 0;
}

int fail(int code, const json& detail) {
  std::cerr << detail.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Harmony-conditioned multi-track symbolic music toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON file with model/train/sampling/grpo/reward sections");

  std::string midi, out, skeleton, checkpoint, log_path, resume, emit_midi;
  std::optional<double> lambda_hn, lambda_nn;
  SamplingFlags flags;
  int toy_bars = 4;
  bool use_toy_skeleton = false;
  std::optional<int> steps;
  int epochs = 4;
  int workers = 1;
  std::uint64_t seed = 0;
  bool bandit = false;
  int bandit_steps = 200;

  auto* analyze = app.add_subcommand("analyze", "Print the harmony skeleton of a MIDI file");
  analyze->add_option("midi", midi)->required();
  analyze->add_option("--emit-midi", emit_midi, "Also write the skeleton as a MIDI file");

  auto* tokenize = app.add_subcommand("tokenize", "Encode every bar and track of a MIDI file");
  tokenize->add_option("midi", midi)->required();
  tokenize->add_option("--out", out, "Write the token JSON here instead of stdout");

  auto* detokenize = app.add_subcommand("detokenize", "Rebuild a MIDI file from token JSON");
  detokenize->add_option("tokens", midi)->required();
  detokenize->add_option("--out", out)->required();

  auto* metrics = app.add_subcommand("metrics", "Objective metrics of a MIDI file");
  metrics->add_option("midi", midi)->required();
  metrics->add_option("--skeleton", skeleton, "Reference skeleton (JSON or MIDI) for precision and recall");
  metrics->add_option("--lambda-hn", lambda_hn);
  metrics->add_option("--lambda-nn", lambda_nn);

  auto* generate = app.add_subcommand("generate", "Sample one window from a checkpoint");
  generate->add_option("--checkpoint", checkpoint)->required();
  auto* sk_opt = generate->add_option("--skeleton", skeleton, "Skeleton file (JSON, JSONL or MIDI)");
  auto* toy_opt = generate->add_flag("--toy-skeletons", use_toy_skeleton, "Sample the skeleton from the toy decoder");
  sk_opt->excludes(toy_opt);
  generate->add_option("--toy-bars", toy_bars, "Bars in a toy skeleton");
  generate->add_option("--out", out)->required();
  generate->add_option("--seed", flags.seed);
  generate->add_option("--top-p", flags.top_p);
  generate->add_option("--temperature", flags.temperature);
  generate->add_option("--lambda-hn", flags.lambda_hn);
  generate->add_option("--lambda-nn", flags.lambda_nn);
  generate->add_flag("--open-ranges", flags.open_ranges, "Disable instrument range masking");

  auto* train_toy = app.add_subcommand("train-toy", "Fit the model to the toy corpus");
  train_toy->add_option("--out", out)->required();
  train_toy->add_option("--resume", resume, "Continue from a checkpoint, optimizer state included");
  train_toy->add_option("--log", log_path, "JSON lines with the loss of every step");
  train_toy->add_option("--steps", steps);

  auto* grpo_toy = app.add_subcommand("grpo-toy", "GRPO fine-tuning on the toy skeletons");
  grpo_toy->add_option("--checkpoint", checkpoint);
  grpo_toy->add_option("--out", out);
  grpo_toy->add_option("--log", log_path, "JSON lines, one per rollout");
  grpo_toy->add_option("--epochs", epochs);
  grpo_toy->add_option("--seed", seed);
  grpo_toy->add_option("--workers", workers, "Concurrent rollouts");
  grpo_toy->add_flag("--bandit", bandit, "Run the two-action bandit instead of the model");
  grpo_toy->add_option("--bandit-steps", bandit_steps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitParse;
  }

  try {
    const Config cfg = load_config(config_path);
    if (*analyze) return cmd_analyze(midi, emit_midi);
    if (*tokenize) return cmd_tokenize(midi, out);
    if (*detokenize) return cmd_detokenize(midi, out);
    if (*metrics) return cmd_metrics(midi, skeleton, dissonance_params(cfg, lambda_hn, lambda_nn));
    if (*generate) {
      if (skeleton.empty() && !use_toy_skeleton) {
        throw ValidationError("generate needs --skeleton or --toy-skeletons");
      }
      return cmd_generate(cfg, checkpoint, skeleton, toy_bars, out, flags);
    }
    if (*train_toy) return cmd_train_toy(cfg, out, resume, log_path, steps);
    if (*grpo_toy) {
      if (bandit) return cmd_grpo_bandit(cfg, bandit_steps, seed);
      if (checkpoint.empty() || out.empty()) throw ValidationError("grpo-toy needs --checkpoint and --out");
      return cmd_grpo_toy(cfg, checkpoint, out, log_path, epochs, seed, workers);
    }
  } catch (const CommandError& e) {
    return fail(e.code, e.detail);
  } catch (const ParseError& e) {
    return fail(kExitParse, {{"error", e.what()}, {"offset", e.offset()}});
  } catch (const DecodeError& e) {
    return fail(kExitParse, {{"error", e.what()}, {"token", e.index()}});
  } catch (const json::exception& e) {
    return fail(kExitParse, {{"error", e.what()}});
  } catch (const ValidationError& e) {
    return fail(kExitParse, {{"error", e.what()}});
  } catch (const CapacityError& e) {
    return fail(kExitCapacity, {{"error", e.what()}});
  } catch (const ShapeError& e) {
    return fail(kExitShape, {{"error", e.what()}});
  } catch (const RewardError& e) {
    return fail(kExitRemote, {{"error", e.what()}});
  } catch (const TrainingError& e) {
    return fail(kExitFailure, {{"error", e.what()}});
  } catch (const std::exception& e) {
    return fail(kExitFailure, {{"error", e.what()}});
  }
  return kExitFailure;
}
