#include "mftsim/util.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mftsim/errors.hpp"

namespace mft {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open file: " + path);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "cannot open file for writing: " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    require(f.good(), "write failed: " + path);
}

void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

} // namespace mft
