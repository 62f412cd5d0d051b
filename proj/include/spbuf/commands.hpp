#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace spbuf::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitPhysics = 3,
  kExitAnalysis = 4,
};

enum class Format { Csv, Json };

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  unsigned jobs = 1;
  Format format = Format::Csv;
  std::vector<int> k_list;                         // sweep-storage, fit-loss
  std::vector<std::filesystem::path> inputs;       // fit-loss histograms
  std::optional<std::filesystem::path> events;     // g2
  std::optional<std::filesystem::path> peaks;      // fit-loss from a peak CSV
  std::optional<std::uint64_t> triggers;           // g2 override
};

inline constexpr const char* kToolVersion = "0.1.0";

int cmd_simulate(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_sweep_storage(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_validate(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_g2(const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_fit_loss(const CommandOptions& opt, std::ostream& out, std::ostream& err);

/// Parses "1-5", "1,3,7" or "0,2-4".
std::vector<int> parse_k_list(const std::string& text);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace spbuf::cli
