#include "mergeprobe/jsonio.hpp"

#include <fstream>
#include <sstream>

namespace mergeprobe {

nlohmann::json read_json_file(const std::filesystem::path& path, ErrorCode parse_code) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(parse_code, path.string() + ": invalid JSON: " + e.what());
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCode::io_failure, "cannot open '" + path.string() + "' for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad())
        fail(ErrorCode::io_failure, "read error on '" + path.string() + "'");
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorCode::io_failure, "cannot open '" + path.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out)
        fail(ErrorCode::io_failure, "write error on '" + path.string() + "'");
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, dump_json(j));
}

std::string fmt_double(double x) { return nlohmann::json(x).dump(); }

}  // namespace mergeprobe
