#include "toonpose/cli.hpp"

int main(int argc, char** argv) { return toonpose::cli::dispatch(argc, argv); }
