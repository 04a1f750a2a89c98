#include "tsg/nn/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "tsg/common/error.hpp"

static_assert(std::endian::native == std::endian::little, "container payloads are little-endian float32");

namespace tsg::nn {

const Tensor* Container::find(const std::string& name) const {
    for (const NamedTensor& t : tensors)
        if (t.name == name) return &t.tensor;
    return nullptr;
}

std::string encode_container(const json& meta, const ParameterStore& store) {
    json index = json::array();
    std::size_t offset = 0;
    for (const auto& e : store.entries()) {
        index.push_back({{"name", e.name}, {"shape", e.var.shape()}, {"offset", offset}});
        offset += e.var.value().size();
    }
    json header = {{"schema", kContainerSchema}, {"meta", meta}, {"tensors", index}, {"payload_floats", offset}};
    std::string out = header.dump() + "\n";
    const std::size_t head = out.size();
    out.resize(head + offset * sizeof(float));
    char* dst = out.data() + head;
    for (const auto& e : store.entries()) {
        const std::size_t bytes = e.var.value().size() * sizeof(float);
        std::memcpy(dst, e.var.value().data(), bytes);
        dst += bytes;
    }
    return out;
}

void save_container(const std::filesystem::path& path, const json& meta, const ParameterStore& store) {
    write_file_atomic(path, encode_container(meta, store));
}

Container load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("checkpoint not found: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ModelError("empty checkpoint: " + path.string());
    json header;
    try {
        header = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ModelError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("schema", "") != kContainerSchema)
        throw ModelError("unsupported checkpoint schema in " + path.string());

    Container c;
    c.meta = header.value("meta", json::object());
    const std::size_t total = header.at("payload_floats").get<std::size_t>();
    std::vector<float> payload(total);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(total * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != total * sizeof(float))
        throw ModelError("truncated checkpoint payload in " + path.string());
    if (in.peek() != std::char_traits<char>::eof())
        throw ModelError("trailing bytes after checkpoint payload in " + path.string());

    for (const json& t : header.at("tensors")) {
        Shape shape = t.at("shape").get<Shape>();
        const std::size_t off = t.at("offset").get<std::size_t>();
        const std::size_t n = element_count(shape);
        if (off + n > total) throw ModelError("tensor " + t.at("name").get<std::string>() + " exceeds payload");
        std::vector<float> data(payload.begin() + static_cast<std::ptrdiff_t>(off),
                                payload.begin() + static_cast<std::ptrdiff_t>(off + n));
        c.tensors.push_back({t.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data))});
    }
    return c;
}

void load_parameters(ParameterStore& store, const Container& c, const std::vector<std::string>& ignored_prefixes) {
    std::unordered_set<std::string> used;
    for (const auto& e : store.entries()) {
        const Tensor* t = c.find(e.name);
        if (!t) throw ModelError("checkpoint is missing tensor " + e.name);
        if (t->shape() != e.var.shape())
            throw ModelError("shape mismatch for " + e.name + ": checkpoint " + to_string(t->shape()) + ", model " +
                             to_string(e.var.shape()));
        Var v = e.var;
        v.mutable_value() = *t;
        used.insert(e.name);
    }
    for (const NamedTensor& t : c.tensors) {
        if (used.count(t.name)) continue;
        bool ignored = false;
        for (const std::string& p : ignored_prefixes) ignored = ignored || t.name.rfind(p, 0) == 0;
        if (!ignored) throw ModelError("checkpoint has unexpected tensor " + t.name);
    }
}

}  // namespace tsg::nn
