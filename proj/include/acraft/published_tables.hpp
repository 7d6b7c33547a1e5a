#pragma once

#include <optional>
#include <string>
#include <vector>

namespace acraft {

/// One published accuracy row: nine session accuracies plus the printed Avg
/// (and the printed drop, where the table has one).
struct PublishedRow {
  std::string name;
  std::vector<double> sessions;
  double listed_avg = 0.0;
  std::optional<double> listed_drop;
};

struct PublishedPair {
  PublishedRow clean;
  PublishedRow attacked;  // listed_drop holds the printed drop of the pair
};

/// miniImageNet comparison against one clean FSCIL method (clean row first).
const std::vector<PublishedRow>& attack_comparison_table();
/// Clean vs attacked rows for four further FSCIL methods.
const std::vector<PublishedPair>& method_generalization_table();

enum class CheckStatus { pass, fail, flagged };

const char* status_label(CheckStatus s);

struct TableCheck {
  std::string label;  // e.g. "CLOSER Avg"
  double computed = 0.0;
  double listed = 0.0;
  CheckStatus status = CheckStatus::pass;
  std::string note;
};

inline constexpr double kTableTolerance = 0.01;

/// Recomputes every Avg from its session values and every drop as
/// Avg(clean) - Avg(attacked) from the printed Avgs. Known inconsistencies
/// in the printed numbers are reported as flagged rather than failed.
std::vector<TableCheck> verify_tables();

}  // namespace acraft
