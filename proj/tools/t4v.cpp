#include "t4v/cli.hpp"

int main(int argc, char** argv) { return t4v::cli::dispatch(argc, argv); }
