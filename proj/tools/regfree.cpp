#include "regfree/cli.hpp"

int main(int argc, char** argv) { return regfreenet::cli::dispatch(argc, argv); }
