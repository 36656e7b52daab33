#include "safer/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace safer {

DatasetView DatasetView::all(const OfflineDataset& d) {
  DatasetView v;
  v.ds = &d;
  v.idx.resize(d.steps.size());
  std::iota(v.idx.begin(), v.idx.end(), 0);
  return v;
}

OfflineDataset collect(const std::vector<TaskSpec>& tasks, std::size_t total_steps,
                       double noise_scale, int w, std::uint64_t seed) {
  if (tasks.empty()) throw std::invalid_argument("collect: no tasks");
  if (total_steps < 1 || w < 1) throw std::invalid_argument("collect: bad sizes");

  OfflineDataset d;
  d.w = w;
  d.suite_seed = seed;
  d.tasks = tasks;
  Rng rng(Rng::mix(seed, 0xc011ec7));

  int episode_id = 0;
  std::size_t task_cursor = 0;
  while (d.steps.size() < total_steps) {
    const TaskSpec& task = tasks[task_cursor];
    task_cursor = (task_cursor + 1) % tasks.size();

    EnvState s = reset(task);
    Eigen::MatrixXd window = Eigen::MatrixXd::Zero(w, 9);
    const std::size_t episode_begin = d.steps.size();
    bool success = false;
    for (int t = 0; t < task.horizon; ++t) {
      // FIFO push of the current state onto the window.
      for (int r = w - 1; r > 0; --r) window.row(r) = window.row(r - 1);
      window.row(0) = s.full().transpose();

      const Vector2d a = scripted_policy(s, noise_scale, rng);
      const StepOutcome out = step(s, a, task, t);

      LabeledStep ls;
      ls.state = s.full();
      ls.action = a;
      ls.reward = out.reward;
      ls.violation = static_cast<std::uint8_t>(out.violation);
      ls.window = window;
      ls.task_id = task.task_id;
      ls.episode_id = episode_id;
      d.steps.push_back(std::move(ls));

      s = out.next_state;
      if (out.done) {
        success = out.success;
        break;
      }
    }
    for (std::size_t i = episode_begin; i < d.steps.size(); ++i)
      d.steps[i].in_successful_rollout = success ? 1 : 0;
    ++episode_id;
  }

  // Fail fast if the collected data cannot support contrastive training.
  partition(d);
  return d;
}

std::pair<DatasetView, DatasetView> partition(const OfflineDataset& d) {
  if (d.steps.empty()) throw std::invalid_argument("partition: empty dataset");
  DatasetView safe, unsafe;
  safe.ds = &d;
  unsafe.ds = &d;
  for (std::size_t i = 0; i < d.steps.size(); ++i) {
    const LabeledStep& s = d.steps[i];
    if (s.violation == 1)
      unsafe.idx.push_back(i);
    else if (s.in_successful_rollout == 1)
      safe.idx.push_back(i);
  }
  if (safe.idx.empty() || unsafe.idx.empty())
    throw std::runtime_error("degenerate dataset");
  return {std::move(safe), std::move(unsafe)};
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw std::invalid_argument("sample_indices: k > n");
  std::vector<std::size_t> out;
  out.reserve(k);
  if (k * 2 >= n) {
    // Partial Fisher-Yates.
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.uniform_int(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  } else {
    std::unordered_set<std::size_t> seen;
    while (out.size() < k) {
      const std::size_t j = rng.uniform_int(n);
      if (seen.insert(j).second) out.push_back(j);
    }
  }
  return out;
}

std::vector<LabeledStep> sample_batch(const DatasetView& view, std::size_t batch_size,
                                      Rng& rng) {
  if (batch_size > view.size())
    throw std::invalid_argument("sample_batch: batch_size exceeds dataset");
  std::vector<LabeledStep> batch;
  batch.reserve(batch_size);
  for (std::size_t i : sample_indices(view.size(), batch_size, rng))
    batch.push_back(view[i]);
  return batch;
}

std::pair<DatasetView, DatasetView> split_by_episode(const OfflineDataset& d) {
  DatasetView train, holdout;
  train.ds = &d;
  holdout.ds = &d;
  for (std::size_t i = 0; i < d.steps.size(); ++i) {
    if (d.steps[i].episode_id % 5 == 4)
      holdout.idx.push_back(i);
    else
      train.idx.push_back(i);
  }
  return {std::move(train), std::move(holdout)};
}

namespace {

constexpr char kMagic[4] = {'S', 'F', 'R', 'D'};
constexpr std::uint32_t kSchemaVersion = 1;

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

void save(const OfflineDataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.write(kMagic, 4);
  put<std::uint32_t>(f, d.schema_version);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(d.w));
  put<std::uint32_t>(f, 9u);
  put<std::uint32_t>(f, 2u);
  put<std::uint64_t>(f, d.steps.size());
  put<std::uint64_t>(f, d.suite_seed);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(d.tasks.size()));
  for (const TaskSpec& t : d.tasks) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(t.task_id));
    put<double>(f, t.gap_width);
    put<double>(f, t.wall_depth);
    put<double>(f, t.wall_center_x);
    put<double>(f, t.object_start.x());
    put<double>(f, t.object_start.y());
    put<std::uint32_t>(f, static_cast<std::uint32_t>(t.horizon));
  }
  for (const LabeledStep& s : d.steps) {
    f.write(reinterpret_cast<const char*>(s.state.data()), 9 * sizeof(double));
    f.write(reinterpret_cast<const char*>(s.action.data()), 2 * sizeof(double));
    put<double>(f, s.reward);
    put<std::uint8_t>(f, s.violation);
    put<std::uint8_t>(f, s.in_successful_rollout);
    for (int r = 0; r < d.w; ++r)
      for (int c = 0; c < 9; ++c) put<double>(f, s.window(r, c));
    put<std::int32_t>(f, s.task_id);
    put<std::int32_t>(f, s.episode_id);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

OfflineDataset load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("format error");
  OfflineDataset d;
  d.schema_version = get<std::uint32_t>(f);
  if (d.schema_version != kSchemaVersion) throw std::runtime_error("version error");
  d.w = static_cast<int>(get<std::uint32_t>(f));
  const auto state_dim = get<std::uint32_t>(f);
  const auto action_dim = get<std::uint32_t>(f);
  if (state_dim != 9 || action_dim != 2) throw std::runtime_error("format error");
  const auto n_steps = get<std::uint64_t>(f);
  d.suite_seed = get<std::uint64_t>(f);
  const auto n_tasks = get<std::uint32_t>(f);
  for (std::uint32_t i = 0; i < n_tasks; ++i) {
    TaskSpec t;
    t.task_id = static_cast<int>(get<std::uint32_t>(f));
    t.gap_width = get<double>(f);
    t.wall_depth = get<double>(f);
    t.wall_center_x = get<double>(f);
    const double ox = get<double>(f);
    const double oy = get<double>(f);
    t.object_start = Vector2d(ox, oy);
    t.horizon = static_cast<int>(get<std::uint32_t>(f));
    d.tasks.push_back(t);
  }
  d.steps.reserve(n_steps);
  for (std::uint64_t i = 0; i < n_steps; ++i) {
    LabeledStep s;
    f.read(reinterpret_cast<char*>(s.state.data()), 9 * sizeof(double));
    f.read(reinterpret_cast<char*>(s.action.data()), 2 * sizeof(double));
    s.reward = get<double>(f);
    s.violation = get<std::uint8_t>(f);
    s.in_successful_rollout = get<std::uint8_t>(f);
    s.window.resize(d.w, 9);
    for (int r = 0; r < d.w; ++r)
      for (int c = 0; c < 9; ++c) s.window(r, c) = get<double>(f);
    s.task_id = get<std::int32_t>(f);
    s.episode_id = get<std::int32_t>(f);
    if (!f) throw std::runtime_error("truncated file");
    if (!s.state.allFinite() || !s.action.allFinite() || !std::isfinite(s.reward) ||
        !s.window.allFinite())
      throw std::runtime_error("non-finite values");
    d.steps.push_back(std::move(s));
  }
  return d;
}

}  // namespace safer
