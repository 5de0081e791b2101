#include "fictplay/eval.hpp"

#include <numeric>

namespace fictplay {

std::vector<Index> sample_indices(Index n, Index sample_size, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (sample_size >= n) return idx;
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(std::max<Index>(sample_size, 1)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::string> list_checkpoints(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: '" + dir + "'");
  std::vector<std::pair<int, std::string>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".fplyckpt") continue;
    found.emplace_back(checkpoint_iteration(e.path().string()), e.path().string());
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> out;
  for (auto& [it, path] : found) out.push_back(std::move(path));
  return out;
}

}  // namespace fictplay
