#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "prodretrieve/cli.hpp"
#include "prodretrieve/prodretrieve.hpp"

namespace testsupport {

namespace pr = prodretrieve;
namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::string tmpl = (fs::temp_directory_path() / ("prodretrieve_" + tag + "_XXXXXX")).string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::vector<std::string> make_ids(const std::string& prefix, std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(1000 + i));
  return ids;
}

inline pr::EmbeddingSet random_set(std::mt19937_64& rng, const std::string& prefix, std::size_t n, std::size_t dim) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> v(n * dim);
  for (auto& x : v) x = nd(rng);
  return pr::EmbeddingSet(make_ids(prefix, n), dim, std::move(v));
}

inline pr::EmbeddingSet random_unit_set(std::mt19937_64& rng, const std::string& prefix, std::size_t n,
                                        std::size_t dim) {
  return pr::l2_normalize(random_set(rng, prefix, n, dim));
}

/// Runs the CLI in-process and captures both streams.
struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "prodretrieve");
  std::ostringstream out, err;
  pr::cli::Context ctx{PRODRETRIEVE_EXE, &out, &err};
  const int code = pr::cli::run(args, ctx);
  return {code, out.str(), err.str()};
}

/// Runs the built binary as a separate process; returns its exit status.
inline int run_exe(const std::vector<std::string>& args, const fs::path& log = "/dev/null") {
  std::string cmd = std::string("'") + PRODRETRIEVE_EXE + "'";
  for (const auto& a : args) cmd += " '" + a + "'";
  cmd += " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

}  // namespace testsupport
