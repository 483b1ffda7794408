#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "symphony/harmony.hpp"
#include "symphony/score.hpp"

namespace symphony {

enum class RewardKind { Proxy, RemoteEmbedding, Composite };
std::string to_string(RewardKind k);
RewardKind reward_kind_from_string(const std::string& s);

struct RewardSpec {
  RewardKind kind = RewardKind::Proxy;
  /// What a composite reward is built on (proxy or remote embedding).
  RewardKind base = RewardKind::Proxy;
  double shaping_weight = 0.2;
  double shaping_scale = 4.0;
  /// Remote embedding service, e.g. http://127.0.0.1:8080/embed.
  std::string url;
  std::string token_env = "SYMPHONY_REWARD_TOKEN";
  int timeout_ms = 10000;
  int max_in_flight = 4;
  /// Normalized reference centroid for the embedding reward.
  std::vector<double> centroid;
};

nlohmann::json reward_to_json(const RewardSpec& s);
RewardSpec reward_from_json(const nlohmann::json& j);

/// weight * tanh(trk / scale).
double shaping_term(double trk, double weight = 0.2, double scale = 4.0);

/// Harmony recall against the skeleton minus tanh(D_hn + D_nn); lies in [-1, 1].
double proxy_reward(const Score& score, const HarmonySkeleton& sk);

/// Mean of the embeddings, normalized to unit length. Throws ValidationError on
/// an empty set, ragged dimensions or a zero-norm mean.
std::vector<double> centroid(const std::vector<std::vector<double>>& embeddings);
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  virtual std::vector<double> embed(const Score& score) = 0;
};

/// POSTs {"midi_b64": <SMF bytes, base64>} with a bearer token read from the
/// environment and expects {"embedding": [numbers]}. Failures raise RewardError.
class RemoteEmbeddingClient : public EmbeddingClient {
 public:
  explicit RemoteEmbeddingClient(const RewardSpec& spec);
  ~RemoteEmbeddingClient() override;
  std::vector<double> embed(const Score& score) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Scores a generated window. Embedding-based kinds need a client.
double reward(const Score& score, const HarmonySkeleton& sk, const RewardSpec& spec, EmbeddingClient* client = nullptr);

}  // namespace symphony
