import concurrent.futures
import logging

logger = logging.getLogger("Materializer.Parallel")


def process_in_parallel(items, process_func, max_workers=4, on_error=None):
    """
    Run process_func over items on a thread pool.
    Returns a list of results in the same order as input.

    An exception inside process_func is logged; the slot then holds
    on_error(item, exc) when a handler is given, else the exception propagates.
    """
    items = list(items)
    results = [None] * len(items)
    if not items:
        return results

    def process_item(item, index):
        try:
            return index, process_func(item)
        except Exception as e:
            if on_error is None:
                raise
            logger.error(f"Error processing item {index}: {e}", exc_info=True)
            return index, on_error(item, e)

    if max_workers <= 1:
        for idx, item in enumerate(items):
            results[idx] = process_item(item, idx)[1]
        return results

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = [executor.submit(process_item, item, idx) for idx, item in enumerate(items)]
        for future in concurrent.futures.as_completed(futures):
            idx, result = future.result()
            results[idx] = result

    return results
