#include "pdenet/json_io.hpp"

#include <fstream>

namespace pdenet {

std::string to_string(Boundary b) { return b == Boundary::Periodic ? "periodic" : "dirichlet"; }

Boundary boundary_from_string(const std::string& s)
{
    if (s == "periodic") {
        return Boundary::Periodic;
    }
    if (s == "dirichlet") {
        return Boundary::Dirichlet;
    }
    throw ConfigError("unknown boundary '" + s + "' (expected periodic or dirichlet)");
}

Json grid_to_json(const Grid2D& g)
{
    return Json{{"nx", g.nx}, {"ny", g.ny}, {"lx", g.lx}, {"ly", g.ly}, {"boundary", to_string(g.boundary)}};
}

Grid2D grid_from_json(const Json& j)
{
    Grid2D g;
    try {
        g.nx = j.value("nx", g.nx);
        g.ny = j.value("ny", g.ny);
        g.lx = j.value("lx", g.lx);
        g.ly = j.value("ly", g.ly);
        g.boundary = boundary_from_string(j.value("boundary", to_string(g.boundary)));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad grid spec: ") + e.what());
    }
    try {
        g.validate();
    } catch (const SizeMismatchError& e) {
        throw ConfigError(e.what());
    }
    return g;
}

void write_json_file(const std::filesystem::path& path, const Json& j)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    os << j.dump(2) << '\n';
    if (!os) {
        throw IoError("write failed for " + path.string());
    }
}

Json read_json_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    try {
        return Json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

} // namespace pdenet
