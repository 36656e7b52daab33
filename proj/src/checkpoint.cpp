#include "safer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace safer {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'R', 'P'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("truncated file");
  return v;
}

}  // namespace

void save_prior(const PriorModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.write(kMagic, 4);
  put<std::uint32_t>(f, kVersion);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.conditioning));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.w));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.flow.cfg.cond_dim));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.flow.cfg.n_layers));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.flow.cfg.hidden));
  put<double>(f, model.flow.cfg.scale_cap);
  VectorXd params;
  model.to_flat(params);
  put<std::uint64_t>(f, static_cast<std::uint64_t>(params.size()));
  f.write(reinterpret_cast<const char*>(params.data()),
          static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!f) throw std::runtime_error("write failed: " + path);
}

PriorModel load_prior(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("format error");
  if (get<std::uint32_t>(f) != kVersion) throw std::runtime_error("version error");
  const auto cond = static_cast<Conditioning>(get<std::uint32_t>(f));
  const int w = static_cast<int>(get<std::uint32_t>(f));
  const int cond_dim = static_cast<int>(get<std::uint32_t>(f));
  const int n_layers = static_cast<int>(get<std::uint32_t>(f));
  const int hidden = static_cast<int>(get<std::uint32_t>(f));
  const double scale_cap = get<double>(f);

  Rng rng(0);
  PriorModel model = PriorModel::make(cond, w, rng, hidden);
  model.flow.cfg.scale_cap = scale_cap;
  if (model.flow.cfg.cond_dim != cond_dim || model.flow.cfg.n_layers != n_layers)
    throw std::runtime_error("format error");

  const auto n = get<std::uint64_t>(f);
  if (n != static_cast<std::uint64_t>(model.param_count()))
    throw std::runtime_error("format error");
  VectorXd params(static_cast<Eigen::Index>(n));
  f.read(reinterpret_cast<char*>(params.data()),
         static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw std::runtime_error("truncated file");
  if (!all_finite(params)) throw std::runtime_error("non-finite values");
  model.from_flat(params);
  return model;
}

}  // namespace safer
