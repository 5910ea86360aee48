#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prcnn/errors.hpp"

#ifndef PRCNN_GIT_DESCRIBE
#define PRCNN_GIT_DESCRIBE "unknown"
#endif

namespace prcnn {

inline std::string utc_now_rfc3339() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// One manifest per run directory; a rerun into the same directory is refused
// rather than overwritten.
class RunManifest {
public:
    RunManifest(std::string out_dir, std::string command, nlohmann::json config,
                std::uint64_t seed)
        : out_dir_(std::move(out_dir)) {
        namespace fs = std::filesystem;
        if (fs::exists(fs::path(out_dir_) / "manifest.json"))
            throw ConfigError("output directory " + out_dir_ +
                              " already contains a manifest.json; refusing to overwrite");
        fs::create_directories(out_dir_);
        j_["command"] = std::move(command);
        j_["config"] = std::move(config);
        j_["seed"] = seed;
        j_["version"] = PRCNN_GIT_DESCRIBE;
        j_["started_at"] = utc_now_rfc3339();
        j_["outputs"] = nlohmann::json::array();
    }

    void add_output(const std::string& path) { j_["outputs"].push_back(path); }
    void set(const std::string& key, const nlohmann::json& value) { j_[key] = value; }

    void finish(const std::string& status = "ok") {
        j_["finished_at"] = utc_now_rfc3339();
        j_["status"] = status;
        std::ofstream f(out_dir_ + "/manifest.json");
        if (!f) throw DataError("cannot write manifest in " + out_dir_);
        f << j_.dump(2) << "\n";
    }

private:
    std::string out_dir_;
    nlohmann::json j_;
};

} // namespace prcnn
