#include "symphony/skeleton_source.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "symphony/errors.hpp"
#include "symphony/midi.hpp"
#include "symphony/optim.hpp"
#include "symphony/sampling.hpp"

namespace symphony {

nlohmann::json SkeletonBatch::report() const {
  nlohmann::json rejections = nlohmann::json::array();
  for (const auto& r : rejected) {
    nlohmann::json reasons = nlohmann::json::array();
    for (auto reason : r.reasons) reasons.push_back(to_string(reason));
    rejections.push_back({{"index", r.index}, {"reasons", reasons}});
  }
  return {{"total", total}, {"accepted", accepted.size()}, {"survival_rate", survival_rate()}, {"rejected", rejections}};
}

SkeletonBatch filter_skeletons(const std::vector<HarmonySkeleton>& skeletons, const FilterConfig& cfg) {
  SkeletonBatch out;
  out.total = skeletons.size();
  for (std::size_t i = 0; i < skeletons.size(); ++i) {
    const auto verdict = filter_skeleton(skeletons[i], cfg);
    if (verdict.accepted) {
      out.accepted.push_back(skeletons[i]);
    } else {
      out.rejected.push_back({i, verdict.reasons});
    }
  }
  return out;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  if (suffix.size() > s.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

}  // namespace

std::vector<HarmonySkeleton> read_skeletons(const std::string& path) {
  if (ends_with(path, ".mid") || ends_with(path, ".midi")) return {analyze_skeleton(parse_midi(read_file(path)))};
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<HarmonySkeleton> out;
  if (ends_with(path, ".jsonl")) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.push_back(skeleton_from_json(nlohmann::json::parse(line)));
    }
    return out;
  }
  const auto j = nlohmann::json::parse(in);
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(skeleton_from_json(item));
  } else {
    out.push_back(skeleton_from_json(j));
  }
  return out;
}

int chord_symbol(const ChordTemplate& chord) {
  if (chord.empty()) return ToySkeletonDecoder::kNoChord;
  const auto& all = all_templates();
  return static_cast<int>(std::find(all.begin(), all.end(), chord) - all.begin());
}

ChordTemplate chord_of_symbol(int symbol) {
  if (symbol < 0 || symbol >= kTemplateCount) return {};
  return all_templates()[static_cast<std::size_t>(symbol)];
}

std::vector<int> voice_chord(const ChordTemplate& chord) {
  if (chord.empty()) return {};
  std::vector<int> tones{48 + chord.root};
  for (int pc : pcs_of(chord.pcs())) tones.push_back(60 + pc);
  std::sort(tones.begin(), tones.end());
  return tones;
}

ToySkeletonDecoder::ToySkeletonDecoder(const SkeletonDecoderConfig& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed);
  tok_emb_ = store_.add("tok_emb", nn::normal_init(rng, kVocab, cfg.width, 0.1));
  pos_emb_ = store_.add("pos_emb", nn::normal_init(rng, cfg.max_beats, cfg.width, 0.1));
  for (int i = 0; i < cfg.layers; ++i) {
    blocks_.emplace_back(store_, "block." + std::to_string(i), cfg.width, cfg.heads, false, rng);
  }
  ln_ = nn::LayerNorm(store_, "out.ln", cfg.width);
  out_ = nn::Linear(store_, "out", cfg.width, kTemplateCount + 1, rng);
}

ad::Var ToySkeletonDecoder::logits(const std::vector<int>& inputs) const {
  const auto n = static_cast<Eigen::Index>(inputs.size());
  if (n > cfg_.max_beats) throw ShapeError("skeleton longer than the decoder's context");
  std::vector<int> pos(inputs.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  ad::Var x = ad::add(ad::gather_rows(tok_emb_, inputs), ad::gather_rows(pos_emb_, pos));
  const std::vector<ad::AttentionSegment> segs = {{0, n, 0, n, {ad::MaskKind::Causal, {}}}};
  for (const auto& b : blocks_) x = b(x, segs, {}, {}, -1);
  return out_(ln_(x));
}

namespace {

std::pair<std::vector<int>, std::vector<int>> chord_sequence(const HarmonySkeleton& sk) {
  std::vector<int> inputs{ToySkeletonDecoder::kBos};
  std::vector<int> targets;
  for (const auto& beat : sk.beats) {
    targets.push_back(chord_symbol(beat.chord));
    inputs.push_back(targets.back());
  }
  inputs.pop_back();
  return {inputs, targets};
}

}  // namespace

double ToySkeletonDecoder::train(const std::vector<HarmonySkeleton>& corpus, int steps, double lr) {
  optim::AdamWConfig oc;
  oc.lr = lr;
  oc.weight_decay = 0.0;
  optim::AdamW opt(store_, oc);
  double last = 0.0;
  for (int step = 0; step < steps; ++step) {
    store_.zero_grad();
    ad::Var total = ad::zeros(1, 1);
    double count = 0.0;
    for (const auto& sk : corpus) {
      if (sk.beats.empty()) continue;
      const auto [inputs, targets] = chord_sequence(sk);
      total = ad::add(total, ad::cross_entropy_sum(logits(inputs), targets));
      count += static_cast<double>(targets.size());
    }
    if (count == 0.0) return 0.0;
    total = ad::scale(total, 1.0 / count);
    last = total.scalar();
    ad::backward(total);
    opt.step(optim::cosine_lr(lr, step, steps, 0, lr * 0.1));
  }
  return last;
}

HarmonySkeleton ToySkeletonDecoder::sample(std::mt19937_64& rng, const std::vector<int>& bar_lengths, double top_p,
                                           double temperature) const {
  ad::NoGradGuard no_grad;
  HarmonySkeleton sk;
  sk.bar_lengths = bar_lengths;
  int beats = 0;
  for (int len : bar_lengths) beats += beats_in_bar(len);
  std::vector<int> inputs{kBos};
  SamplingConfig sc;
  sc.top_p = top_p;
  sc.temperature = temperature;
  for (int i = 0; i < beats; ++i) {
    const auto row = logits(inputs).value().row(static_cast<Eigen::Index>(i));
    const int symbol = nucleus_sample(std::vector<double>(row.data(), row.data() + row.size()), sc, rng);
    HarmonyBeat beat;
    beat.beat_index = i;
    beat.chord = chord_of_symbol(symbol);
    beat.tones = voice_chord(beat.chord);
    sk.beats.push_back(std::move(beat));
    inputs.push_back(symbol);
  }
  return sk;
}

double ToySkeletonDecoder::log_prob(const HarmonySkeleton& sk) const {
  if (sk.beats.empty()) return 0.0;
  ad::NoGradGuard no_grad;
  const auto [inputs, targets] = chord_sequence(sk);
  return ad::sum_all(ad::log_prob_of(logits(inputs), targets)).scalar() / static_cast<double>(targets.size());
}

}  // namespace symphony
