#pragma once

#include "stmoe/metrics.hpp"
#include "stmoe/model_config.hpp"
#include "stmoe/train.hpp"

#include <string>
#include <vector>

namespace stmoe {

/// Everything a run needs, settable from a flat key=value file plus
/// command-line overrides. `train.phase` is owned by the subcommand and is
/// deliberately not a key.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    GeoBleuConfig geo_bleu;
};

struct ConfigKey {
    const char* name;
    const char* doc;
    void (*set)(RunConfig&, const std::string& value);
    std::string (*get)(const RunConfig&);
};

/// The full schema, in file order. Unknown keys are fatal by construction:
/// apply_setting only accepts names from this table.
const std::vector<ConfigKey>& config_schema();

/// Set one key. Throws std::invalid_argument for unknown keys or unparsable
/// values (message names the key and the expected type).
void apply_setting(RunConfig& rc, const std::string& key, const std::string& value);

/// Apply `key = value` lines from a file. `#` starts a comment; blank lines
/// are skipped. Throws std::runtime_error if the file cannot be read and
/// std::invalid_argument (with a line number) on any malformed line.
void apply_config_file(RunConfig& rc, const std::string& path);

/// Every key at its current value, one per line — parseable by
/// apply_config_file and stable under round-trip.
std::string dump_run_config(const RunConfig& rc);

/// Schema rendered for --help output.
std::string config_help();

}  // namespace stmoe
