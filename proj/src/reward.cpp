#include "symphony/reward.hpp"

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <semaphore>

#include "httplib.h"
#include "symphony/errors.hpp"
#include "symphony/metrics.hpp"
#include "symphony/midi.hpp"

namespace symphony {

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::Proxy:
      return "proxy";
    case RewardKind::RemoteEmbedding:
      return "remote-embedding";
    case RewardKind::Composite:
      return "composite";
  }
  return "proxy";
}

RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "proxy") return RewardKind::Proxy;
  if (s == "remote-embedding") return RewardKind::RemoteEmbedding;
  if (s == "composite") return RewardKind::Composite;
  throw ValidationError("unknown reward kind \"" + s + "\"");
}

nlohmann::json reward_to_json(const RewardSpec& s) {
  return {{"kind", to_string(s.kind)},       {"base", to_string(s.base)},
          {"shaping_weight", s.shaping_weight}, {"shaping_scale", s.shaping_scale},
          {"url", s.url},                    {"token_env", s.token_env},
          {"timeout_ms", s.timeout_ms},      {"max_in_flight", s.max_in_flight},
          {"centroid", s.centroid}};
}

RewardSpec reward_from_json(const nlohmann::json& j) {
  RewardSpec s;
  if (j.contains("kind")) s.kind = reward_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("base")) s.base = reward_kind_from_string(j.at("base").get<std::string>());
  if (s.base == RewardKind::Composite) throw ValidationError("a composite reward cannot be its own base");
  s.shaping_weight = j.value("shaping_weight", s.shaping_weight);
  s.shaping_scale = j.value("shaping_scale", s.shaping_scale);
  s.url = j.value("url", s.url);
  s.token_env = j.value("token_env", s.token_env);
  s.timeout_ms = j.value("timeout_ms", s.timeout_ms);
  s.max_in_flight = j.value("max_in_flight", s.max_in_flight);
  s.centroid = j.value("centroid", s.centroid);
  if (s.shaping_scale <= 0.0) throw ValidationError("shaping_scale must be positive");
  return s;
}

double shaping_term(double trk, double weight, double scale) { return weight * std::tanh(trk / scale); }

double proxy_reward(const Score& score, const HarmonySkeleton& sk) {
  const auto r = evaluate(score, &sk);
  return r.rec.value_or(0.0) - std::tanh(r.d_hn.value_or(0.0) + r.d_nn.value_or(0.0));
}

std::vector<double> centroid(const std::vector<std::vector<double>>& embeddings) {
  if (embeddings.empty()) throw ValidationError("centroid of an empty set");
  const std::size_t dim = embeddings.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != dim) throw ValidationError("embeddings differ in dimension");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += e[i] / static_cast<double>(embeddings.size());
  }
  const double norm = std::sqrt(std::inner_product(mean.begin(), mean.end(), mean.begin(), 0.0));
  if (!(norm > 1e-12)) throw ValidationError("centroid has zero norm");
  for (double& x : mean) x /= norm;
  return mean;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ValidationError("cosine of vectors with different dimension");
  const double dot = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  const double na = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
  const double nb = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine with a zero vector");
  return dot / (na * nb);
}

struct RemoteEmbeddingClient::Impl {
  std::string origin;
  std::string path;
  std::string token;
  int timeout_ms;
  std::counting_semaphore<64> in_flight;

  Impl(std::string o, std::string p, std::string t, int timeout, int max_in_flight)
      : origin(std::move(o)), path(std::move(p)), token(std::move(t)), timeout_ms(timeout),
        in_flight(std::clamp(max_in_flight, 1, 64)) {}
};

RemoteEmbeddingClient::RemoteEmbeddingClient(const RewardSpec& spec) {
  const std::string& url = spec.url;
  const auto scheme_end = url.find("://");
  if (url.empty() || scheme_end == std::string::npos) throw RewardError("invalid embedding service url \"" + url + "\"");
  const auto path_start = url.find('/', scheme_end + 3);
  std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  std::string token;
  if (const char* v = std::getenv(spec.token_env.c_str())) token = v;
  impl_ = std::make_unique<Impl>(std::move(origin), std::move(path), std::move(token), spec.timeout_ms,
                                 spec.max_in_flight);
}

RemoteEmbeddingClient::~RemoteEmbeddingClient() = default;

std::vector<double> RemoteEmbeddingClient::embed(const Score& score) {
  const auto midi = write_midi(score);
  const nlohmann::json body = {
      {"midi_b64", httplib::detail::base64_encode(std::string(midi.begin(), midi.end()))}};

  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<64>& s;
    ~Release() { s.release(); }
  } release{impl_->in_flight};

  httplib::Client client(impl_->origin);
  const auto seconds = impl_->timeout_ms / 1000;
  const auto micros = (impl_->timeout_ms % 1000) * 1000;
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);
  httplib::Headers headers;
  if (!impl_->token.empty()) headers.emplace("Authorization", "Bearer " + impl_->token);
  const auto res = client.Post(impl_->path, headers, body.dump(), "application/json");
  if (!res) throw RewardError("embedding service unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw RewardError("embedding service returned HTTP " + std::to_string(res->status));
  try {
    const auto j = nlohmann::json::parse(res->body);
    auto embedding = j.at("embedding").get<std::vector<double>>();
    if (embedding.empty()) throw RewardError("embedding service returned an empty embedding");
    for (double x : embedding) {
      if (!std::isfinite(x)) throw RewardError("embedding service returned a non-finite value");
    }
    return embedding;
  } catch (const nlohmann::json::exception& e) {
    throw RewardError(std::string("malformed embedding response: ") + e.what());
  }
}

namespace {

double base_reward(RewardKind kind, const Score& score, const HarmonySkeleton& sk, const RewardSpec& spec,
                   EmbeddingClient* client) {
  if (kind == RewardKind::Proxy) return proxy_reward(score, sk);
  if (!client) throw RewardError("embedding reward needs a client");
  if (spec.centroid.empty()) throw RewardError("embedding reward needs a reference centroid");
  try {
    return cosine_similarity(client->embed(score), spec.centroid);
  } catch (const ValidationError& e) {
    throw RewardError(std::string("embedding does not match the centroid: ") + e.what());
  }
}

}  // namespace

double reward(const Score& score, const HarmonySkeleton& sk, const RewardSpec& spec, EmbeddingClient* client) {
  if (spec.kind != RewardKind::Composite) return base_reward(spec.kind, score, sk, spec, client);
  const double trk = score.bars.empty() ? 0.0 : track_density(score);
  return base_reward(spec.base, score, sk, spec, client) + shaping_term(trk, spec.shaping_weight, spec.shaping_scale);
}

}  // namespace symphony
