#include "ivp/manifest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include "ivp/errors.hpp"

namespace ivp {

std::string blob_hash(const std::string& content) {
    const std::string framed = "blob " + std::to_string(content.size()) + '\0' + content;
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(framed.data(), framed.size(), digest, &len, EVP_sha1(), nullptr) != 1)
        throw Error("SHA-1 digest failed");
    static const char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string blob_hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return blob_hash(buf.str());
}

namespace {

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            default: out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

}  // namespace

void write_manifest(const RunManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "{\n  \"command\": " << quoted(manifest.command) << ",\n  \"flags\": {";
    for (size_t i = 0; i < manifest.flags.size(); ++i) {
        out << (i ? ", " : "") << quoted(manifest.flags[i].first) << ": "
            << quoted(manifest.flags[i].second);
    }
    out << "},\n  \"seed\": " << manifest.seed << ",\n  \"inputs\": {";
    for (size_t i = 0; i < manifest.inputs.size(); ++i) {
        out << (i ? ", " : "") << quoted(manifest.inputs[i].first) << ": "
            << quoted(manifest.inputs[i].second);
    }
    out << "},\n  \"outputs\": [";
    for (size_t i = 0; i < manifest.outputs.size(); ++i)
        out << (i ? ", " : "") << quoted(manifest.outputs[i]);
    out << "]\n}\n";
}

}  // namespace ivp
