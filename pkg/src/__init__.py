# Encyclopedia corpus materializer
