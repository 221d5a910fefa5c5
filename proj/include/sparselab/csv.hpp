#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparselab {

// Shortest round-trip decimal form; locale-independent, so identical runs
// produce byte-identical files.
inline std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("fmt_double: conversion failed");
    return std::string(buf, ptr);
}

// Minimal RFC-4180-style writer: header row, '.' decimals, '\n' line ends.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("csv: cannot open " + path + " for writing");
    }

    void header(const std::vector<std::string>& cols) { write_row(cols); }

    void row(const std::vector<std::string>& cells) { write_row(cells); }

    class RowBuilder {
    public:
        explicit RowBuilder(CsvWriter& w) : w_(w) {}
        RowBuilder& add(double v) {
            cells_.push_back(fmt_double(v));
            return *this;
        }
        RowBuilder& add(long long v) {
            cells_.push_back(std::to_string(v));
            return *this;
        }
        RowBuilder& add(std::size_t v) {
            cells_.push_back(std::to_string(v));
            return *this;
        }
        RowBuilder& add(const std::string& v) {
            cells_.push_back(v);
            return *this;
        }
        void done() { w_.write_row(cells_); }

    private:
        CsvWriter& w_;
        std::vector<std::string> cells_;
    };

    RowBuilder start_row() { return RowBuilder(*this); }

private:
    void write_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    std::ofstream out_;
};

}  // namespace sparselab
